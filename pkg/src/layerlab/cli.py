"""Command-line experiment harness.

Subcommands:
    run    -- execute a JSON experiment config
    repro  -- canned configs reproducing the headline experiments
    bound  -- integrate the growth bound for a given depth and margins
    modes  -- run a mode-decoupling comparison config

Every run writes CSV tables, SVG charts regenerated purely from those CSVs,
and a metadata JSON recording the config hash, seed, and derived
quantities.  Exit codes: 0 success, 2 config error, 3 numerical
divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics, init as init_mod
from .charts import line_chart
from .config import (
    config_hash,
    load_config,
    preset_fig1,
    preset_fig2,
    validate_config,
)
from .data import Dataset, MixtureSpec, load_idx, make_mixture_regression
from .errors import ConfigError, DivergenceError, IdxFormatError, LayerlabError
from .linalg import frobenius_norm
from .linear import FlowConfig, covariance, end_to_end, run_training
from .relu import glorot_beta_for_relu, relu_forward_batch, run_relu_training

__all__ = ["main", "run"]


def _fmt(value) -> str:
    return f"{value:.17g}"


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def _read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    cols = {name: np.empty(len(rows)) for name in header}
    for i, row in enumerate(rows):
        for name, value in zip(header, row):
            cols[name][i] = float(value)
    return cols


def _write_metadata(out_dir: Path, cfg: dict, derived: dict, notes: list[str]):
    payload = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "derived": derived,
        "notes": notes,
    }
    with open(out_dir / "metadata.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _build_net(cfg: dict, cov):
    scheme = cfg["init"]["scheme"]
    if scheme == "glorot":
        beta = cfg["init"]["beta"]
        if beta is None:
            beta = glorot_beta_for_relu(cfg["dims"])
        return init_mod.glorot_init(cfg["dims"], beta=beta, seed=cfg["seed"]), None
    if scheme == "balanced_orthogonal":
        return (
            init_mod.balanced_orthogonal_init(
                cfg["dims"], cfg["init"]["sigma_profile"], seed=cfg["seed"]
            ),
            None,
        )
    return init_mod.saxe_aligned_init(
        cfg["dims"], cov, cfg["init"]["sigma0"], seed=cfg["seed"]
    )


def _make_dataset(cfg: dict) -> Dataset:
    spec = MixtureSpec(
        components=cfg["data"]["components"],
        samples_per_component=cfg["data"]["samples_per_component"],
        dim=cfg["data"]["dim"],
    )
    return make_mixture_regression(
        spec,
        n_targets=cfg["data"]["targets"],
        seed=cfg["seed"],
        teacher_scale=cfg["data"]["teacher_scale"],
    )


def _trajectory_rows(traj):
    depth = traj.depth
    sq_gaps = traj.squared_norm_gaps()
    drift = np.zeros((len(traj), depth - 1))
    if traj.conservation is not None:
        base = traj.conservation[0]
        for t, snap in enumerate(traj.conservation):
            for p in range(depth - 1):
                drift[t, p] = frobenius_norm(snap[p] - base[p])
    header = ["step", "t", "loss"]
    header += [f"norm_W{l + 1}" for l in range(depth)]
    header += ["prod_norm"]
    header += [f"sq_gap_{p + 1}" for p in range(depth - 1)]
    header += [f"cons_drift_{p + 1}" for p in range(depth - 1)]
    rows = []
    for i in range(len(traj)):
        row = [int(traj.steps[i]), float(traj.times[i]), float(traj.losses[i])]
        row += [float(v) for v in traj.layer_norms[i]]
        row += [float(traj.prod_norms[i])]
        row += [float(v) for v in sq_gaps[i]]
        row += [float(v) for v in drift[i]]
        rows.append(row)
    return header, rows


def _chart_lnn(out_dir: Path, depth: int, sigma_yx_norm: float) -> None:
    cols = _read_csv(out_dir / "trajectory.csv")
    t = cols["t"]
    series = {f"|W{l + 1}|_F": (t, cols[f"norm_W{l + 1}"]) for l in range(depth)}
    series["|product|_F"] = (t, cols["prod_norm"])
    series["|target|_F"] = (t, np.full_like(t, sigma_yx_norm))
    line_chart(series, out_dir / "norms.svg", title="Layer norm growth",
               x_label="t", y_label="Frobenius norm")
    line_chart({"loss": (t, cols["loss"])}, out_dir / "loss.svg",
               title="Training loss", x_label="t", y_label="loss",
               log_y=bool(np.any(cols["loss"] > 0)))
    bound_cols = _read_csv(out_dir / "bound.csv")
    line_chart(
        {
            "measured U": (bound_cols["t"], bound_cols["u"]),
            "integrated bound": (bound_cols["t"], bound_cols["u_bound"]),
        },
        out_dir / "bound.svg",
        title="Compounded strength vs growth bound",
        x_label="t",
        y_label="U",
    )


def _flush_partial(exc: DivergenceError, cfg: dict, out_dir: Path) -> None:
    """Write whatever a diverged run managed to record, then let it fail."""
    partial = getattr(exc, "partial", None)
    if partial is not None and len(partial) > 0:
        header, rows = _trajectory_rows(partial)
        _write_csv(out_dir / "trajectory.csv", header, rows)
    _write_metadata(out_dir, cfg, {"diverged_at_step": exc.step}, [str(exc)])


def run_lnn(cfg: dict, out_dir: Path) -> dict:
    data = _make_dataset(cfg)
    cov = covariance(data)
    net, alignment = _build_net(cfg, cov)
    flow = FlowConfig(**cfg["flow"])
    try:
        traj, final_net = run_training(net, data, flow, alignment=alignment)
    except DivergenceError as exc:
        _flush_partial(exc, cfg, out_dir)
        raise

    header, rows = _trajectory_rows(traj)
    _write_csv(out_dir / "trajectory.csv", header, rows)

    kappa1, kappa2 = diagnostics.estimate_kappas(traj)
    delta = diagnostics.layer_norm_spread(traj.layer_norms[0])
    check = diagnostics.bound_check(traj, kappa1, kappa2)
    params = diagnostics.BoundParams(
        depth=traj.depth, kappa1=kappa1, kappa2=kappa2,
        sigma_yx_norm=traj.sigma_yx_norm, delta=delta,
        u0=float(check.strengths[0]), tau=flow.tau,
    )
    bound = diagnostics.bound_trajectory(
        params, cfg["flow"]["steps"], record_every=cfg["flow"]["record_every"]
    )
    slopes = np.append(check.slopes, np.nan)
    rates = np.append(check.rates, np.nan)
    _write_csv(
        out_dir / "bound.csv",
        ["step", "t", "u", "du_dt", "bound_rhs", "u_bound"],
        [
            [int(traj.steps[i]), float(traj.times[i]), float(check.strengths[i]),
             float(slopes[i]), float(rates[i]), float(bound.values[i])]
            for i in range(len(traj))
        ],
    )

    final_misfit = frobenius_norm(end_to_end(final_net) - cov.sigma_yx)
    derived = {
        "sigma_yx_norm": traj.sigma_yx_norm,
        "delta": delta,
        "kappa1": kappa1,
        "kappa2": kappa2,
        "final_loss": float(traj.losses[-1]),
        "final_misfit": float(final_misfit),
        "max_bound_excess": check.max_relative_excess(),
    }
    notes = ["inputs whitened before training; targets regenerated from the "
             "teacher so the covariance equals the teacher exactly"]
    _write_metadata(out_dir, cfg, derived, notes)
    _chart_lnn(out_dir, traj.depth, traj.sigma_yx_norm)
    return derived


def _chart_relu(out_dir: Path, depth: int) -> None:
    cols = _read_csv(out_dir / "trajectory.csv")
    t = cols["t"]
    norm_series = {
        f"|W{l + 1}|_F": (t, cols[f"norm_W{l + 1}"]) for l in range(depth)
    }
    line_chart(norm_series, out_dir / "norms.svg",
               title="ReLU layer norms", x_label="t", y_label="Frobenius norm")
    agree = {
        f"layer {l + 1}+": (t, cols[f"agreement_{l + 1}"]) for l in range(depth)
    }
    line_chart(agree, out_dir / "agreement.svg",
               title="Same-label mask agreement", x_label="t",
               y_label="agreement fraction")
    growth = _read_csv(out_dir / "growth.csv")
    tg = growth["t_end"]
    gaps = {
        key: (tg, growth[key]) for key in growth if key.startswith("gap_")
    }
    line_chart(gaps, out_dir / "growth.svg",
               title="Adjacent-layer growth-rate gaps", x_label="t",
               y_label="|gap| per unit time")


def run_relu(cfg: dict, out_dir: Path) -> dict:
    batch = load_idx(cfg["data"]["images"], cfg["data"]["labels"],
                     limit=cfg["data"]["subset"])
    if batch.inputs.shape[1] != cfg["dims"][0]:
        raise ConfigError(
            f"dims[0] = {cfg['dims'][0]} does not match image size "
            f"{batch.inputs.shape[1]}",
            field="dims",
        )
    net, _ = _build_net(cfg, cov=None)
    flow = FlowConfig(**cfg["flow"])
    try:
        traj, final_net = run_relu_training(net, batch, flow)
    except DivergenceError as exc:
        _flush_partial(exc, cfg, out_dir)
        raise

    depth = traj.depth
    header = ["step", "t", "loss"]
    header += [f"norm_W{l + 1}" for l in range(depth)]
    header += [f"agreement_{l + 1}" for l in range(depth)]
    rows = []
    for i in range(len(traj)):
        row = [int(traj.steps[i]), float(traj.times[i]), float(traj.losses[i])]
        row += [float(v) for v in traj.layer_norms[i]]
        row += [float(v) for v in traj.mask_agreement[i]]
        rows.append(row)
    _write_csv(out_dir / "trajectory.csv", header, rows)

    gheader = ["t_start", "t_end"]
    gheader += [f"gap_{p + 1}_{p + 2}" for p in range(depth - 1)]
    gheader += [f"cross_{p + 1}_{p + 2}" for p in range(depth - 1)]
    grows = []
    for i in range(len(traj) - 1):
        row = [float(traj.times[i]), float(traj.times[i + 1])]
        row += [float(v) for v in traj.growth_gaps[i]]
        row += [float(v) for v in traj.cross_sample_gaps[i]]
        grows.append(row)
    _write_csv(out_dir / "growth.csv", gheader, grows)

    probs, _ = relu_forward_batch(final_net, batch.inputs)
    accuracy = float(np.mean(np.argmax(probs, axis=1) == batch.labels))
    derived = {
        "final_loss": float(traj.losses[-1]),
        "final_train_accuracy": accuracy,
        "n_samples": batch.n_samples,
        "weight_matrices": depth,
        "final_agreement": [float(v) for v in traj.mask_agreement[-1]],
    }
    notes = [f"{depth} weight matrices with hidden widths "
             f"{cfg['dims'][1:-1]} (activations masked at every layer)"]
    _write_metadata(out_dir, cfg, derived, notes)
    _chart_relu(out_dir, depth)
    return derived


def run_bound_sweep(cfg: dict, out_dir: Path) -> dict:
    threads = max(1, int(os.environ.get("RUN_THREADS", "1")))

    def one(depth: int):
        params = diagnostics.BoundParams(
            depth=depth, kappa1=cfg["kappa1"], kappa2=cfg["kappa2"],
            sigma_yx_norm=cfg["sigma_yx_norm"], delta=0.0, u0=cfg["u0"],
            tau=cfg["tau"],
        )
        return diagnostics.bound_trajectory(
            params, cfg["steps"], record_every=cfg["record_every"]
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            series = list(pool.map(one, cfg["layers"]))
    else:
        series = [one(depth) for depth in cfg["layers"]]

    header = ["step", "t"] + [f"u_L{depth}" for depth in cfg["layers"]]
    rows = []
    for i in range(len(series[0].steps)):
        row = [int(series[0].steps[i]), float(series[0].times[i])]
        row += [float(s.values[i]) for s in series]
        rows.append(row)
    _write_csv(out_dir / "bound.csv", header, rows)

    m_cap = (2 * cfg["kappa1"] + 1) * cfg["sigma_yx_norm"]
    derived = {"m_cap": m_cap}
    for depth, s in zip(cfg["layers"], series):
        entry = {"max_slope": s.max_slope()}
        try:
            entry["time_to_half_cap"] = s.time_to(m_cap / 2)
        except ValueError:
            entry["time_to_half_cap"] = None
        derived[f"L{depth}"] = entry
    _write_metadata(out_dir, cfg, derived, [])

    cols = _read_csv(out_dir / "bound.csv")
    line_chart(
        {f"L = {depth}": (cols["t"], cols[f"u_L{depth}"])
         for depth in cfg["layers"]},
        out_dir / "bound_sweep.svg",
        title="Growth-bound integration by depth",
        x_label="t", y_label="U",
    )
    return derived


def run_mode_compare(cfg: dict, out_dir: Path) -> dict:
    data = _make_dataset(cfg)
    cov = covariance(data)
    net, alignment = init_mod.saxe_aligned_init(
        cfg["dims"], cov, cfg["init"]["sigma0"], seed=cfg["seed"]
    )
    flow = FlowConfig(**cfg["flow"])
    traj, _ = run_training(net, data, flow, alignment=alignment)

    depth = traj.depth
    n_modes = alignment.n_modes
    sigma0 = np.broadcast_to(
        np.asarray(cfg["init"]["sigma0"], dtype=np.float64), (depth,)
    )
    odes = [
        diagnostics.integrate_mode_ode(alignment.data_strengths[k], sigma0, flow)
        for k in range(n_modes)
    ]

    header = ["step", "t"]
    for k in range(n_modes):
        for l in range(depth):
            header += [f"measured_m{k + 1}_l{l + 1}", f"ode_m{k + 1}_l{l + 1}"]
    rows = []
    max_rel_err = 0.0
    for i in range(len(traj)):
        row = [int(traj.steps[i]), float(traj.times[i])]
        for k in range(n_modes):
            for l in range(depth):
                measured = float(traj.mode_strengths[i, l, k])
                predicted = float(odes[k].strengths[i, l])
                row += [measured, predicted]
                max_rel_err = max(
                    max_rel_err,
                    abs(measured - predicted) / max(abs(predicted), 1e-12),
                )
        rows.append(row)
    _write_csv(out_dir / "modes.csv", header, rows)

    derived = {
        "n_modes": n_modes,
        "data_strengths": [float(s) for s in alignment.data_strengths],
        "max_relative_error": max_rel_err,
    }
    _write_metadata(out_dir, cfg, derived, [])

    cols = _read_csv(out_dir / "modes.csv")
    series = {}
    for k in range(n_modes):
        series[f"mode {k + 1} (measured)"] = (
            cols["t"], cols[f"measured_m{k + 1}_l1"])
        series[f"mode {k + 1} (recurrence)"] = (
            cols["t"], cols[f"ode_m{k + 1}_l1"])
    line_chart(series, out_dir / "modes.svg",
               title="First-layer mode strengths", x_label="t",
               y_label="strength")
    return derived


_RUNNERS = {
    "lnn_train": run_lnn,
    "relu_train": run_relu,
    "bound_sweep": run_bound_sweep,
    "mode_compare": run_mode_compare,
}


def run(cfg: dict, out_dir) -> dict:
    """Execute a validated config, writing artifacts into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return _RUNNERS[cfg["kind"]](cfg, out_dir)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layerlab",
        description="Training-dynamics experiments for deep linear and "
                    "masked ReLU networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a JSON experiment config")
    p_run.add_argument("--config", required=True, help="path to config JSON")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    p_repro = sub.add_parser("repro", help="run a canned experiment")
    repro_sub = p_repro.add_subparsers(dest="target", required=True)
    p_fig1 = repro_sub.add_parser("fig1", help="synthetic linear-network runs")
    p_fig1.add_argument("--variant", default="two_matrix",
                        choices=["two_matrix", "four_matrix", "bound_sweep"])
    p_fig1.add_argument("--out", default="runs/fig1")
    p_fig1.add_argument("--seed", type=int, default=None)
    p_fig2 = repro_sub.add_parser("fig2", help="deep ReLU run on IDX data")
    p_fig2.add_argument("--images", required=True)
    p_fig2.add_argument("--labels", required=True)
    p_fig2.add_argument("--subset", type=int, default=1000)
    p_fig2.add_argument("--out", default="runs/fig2")
    p_fig2.add_argument("--seed", type=int, default=None)

    p_bound = sub.add_parser("bound", help="integrate the growth bound")
    p_bound.add_argument("--L", type=int, required=True, dest="depth",
                         help="number of weight matrices (>= 2)")
    p_bound.add_argument("--kappa1", type=float, required=True)
    p_bound.add_argument("--kappa2", type=float, required=True)
    p_bound.add_argument("--m", type=float, required=True,
                         help="Frobenius norm of the covariance target")
    p_bound.add_argument("--u0", type=float, required=True)
    p_bound.add_argument("--tau", type=float, default=1000.0)
    p_bound.add_argument("--steps", type=int, default=4000)
    p_bound.add_argument("--out", default="runs/bound")

    p_modes = sub.add_parser("modes", help="mode-decoupling comparison")
    p_modes.add_argument("--config", required=True)
    p_modes.add_argument("--out", required=True)
    p_modes.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg["seed"] = args.seed
            run(cfg, args.out)
        elif args.command == "repro" and args.target == "fig1":
            cfg = preset_fig1(args.variant)
            if args.seed is not None:
                cfg["seed"] = args.seed
            run(cfg, args.out)
        elif args.command == "repro" and args.target == "fig2":
            cfg = preset_fig2(args.images, args.labels, subset=args.subset)
            if args.seed is not None:
                cfg["seed"] = args.seed
            run(cfg, args.out)
        elif args.command == "bound":
            cfg = validate_config({
                "schema_version": 1,
                "kind": "bound_sweep",
                "seed": 0,
                "layers": [args.depth],
                "kappa1": args.kappa1,
                "kappa2": args.kappa2,
                "sigma_yx_norm": args.m,
                "u0": args.u0,
                "tau": args.tau,
                "steps": args.steps,
            })
            derived = run(cfg, args.out)
            info = derived[f"L{args.depth}"]
            print(f"m_cap = {derived['m_cap']:.6g}")
            print(f"time_to_half_cap = {info['time_to_half_cap']}")
            print(f"max_slope = {info['max_slope']:.6g}")
        elif args.command == "modes":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg["seed"] = args.seed
            if cfg["kind"] != "mode_compare":
                raise ConfigError(
                    f"modes expects a mode_compare config, got {cfg['kind']!r}",
                    field="kind",
                )
            run(cfg, args.out)
        else:  # pragma: no cover - argparse enforces choices
            raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 3
    except (OSError, IdxFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except LayerlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
