"""Experiment configuration schema, validation, and presets.

Configs are plain JSON objects with a versioned schema.  Validation is
strict: unknown keys are rejected and errors name the offending field, so a
config either runs exactly as written or fails loudly.
"""

from __future__ import annotations

import hashlib
import json

from .errors import ConfigError

__all__ = [
    "SCHEMA_VERSION",
    "config_hash",
    "load_config",
    "preset_fig1",
    "preset_fig2",
    "validate_config",
]

SCHEMA_VERSION = 1

KINDS = ("lnn_train", "relu_train", "bound_sweep", "mode_compare")

# Defaults of the first-figure reproduction.  eta/steps are pinned so the
# run converges (end-to-end misfit below 1e-3) in seconds on a laptop; the
# seed is pinned so the derived margin estimates land at their documented
# values.
FIG1_SEED = 2
FIG1_ETA = 1e-3
FIG1_STEPS = 20000
FIG1_RECORD_EVERY = 20
FIG1_BETA = 1.0
FIG1_TEACHER_SCALE = 1.0
FIG1_MIXTURE = {"components": 3, "samples_per_component": 400, "dim": 10,
                "targets": 3}

BOUND_SWEEP_DEFAULTS = {
    "layers": [2, 3, 4],
    "kappa1": 0.98,
    "kappa2": 0.65,
    "sigma_yx_norm": 5.0,
    "u0": 0.05,
    "tau": 1000.0,
    "steps": 4000,
    "record_every": 1,
}

FIG2_DIMS = [784, 100, 100, 100, 100, 100, 100, 10]
FIG2_ETA = 0.2
FIG2_STEPS = 2000
FIG2_RECORD_EVERY = 20
FIG2_SUBSET = 1000


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}", field=path)


def _get(section: dict, path: str, key: str, kind, required=True, default=None):
    if key not in section:
        if required:
            _fail(f"{path}.{key}" if path else key, "missing required key")
        return default
    value = section[key]
    wants_float = kind is float or (isinstance(kind, tuple) and float in kind)
    if wants_float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        name = kind.__name__ if not isinstance(kind, tuple) else "/".join(
            k.__name__ for k in kind
        )
        _fail(f"{path}.{key}" if path else key, f"expected {name}, got {value!r}")
    return value


def _reject_unknown(section: dict, path: str, allowed: set[str]):
    for key in section:
        if key not in allowed:
            _fail(f"{path}.{key}" if path else key, "unknown key")


def _positive(value, path):
    if value <= 0:
        _fail(path, f"must be positive, got {value}")
    return value


def _validate_flow(flow: dict, path: str) -> dict:
    _reject_unknown(flow, path, {"eta", "steps", "record_every"})
    eta = _positive(_get(flow, path, "eta", float), f"{path}.eta")
    steps = _positive(_get(flow, path, "steps", int), f"{path}.steps")
    record = _positive(
        _get(flow, path, "record_every", int, required=False, default=1),
        f"{path}.record_every",
    )
    return {"eta": eta, "steps": steps, "record_every": record}


def _validate_dims(dims, path: str) -> list[int]:
    if not isinstance(dims, list) or len(dims) < 2:
        _fail(path, "must be a list of at least two layer widths")
    for i, d in enumerate(dims):
        if not isinstance(d, int) or d < 1:
            _fail(f"{path}[{i}]", f"must be a positive integer, got {d!r}")
    return dims


def _validate_init(init: dict, path: str) -> dict:
    scheme = _get(init, path, "scheme", str)
    if scheme == "glorot":
        _reject_unknown(init, path, {"scheme", "beta"})
        beta = _get(init, path, "beta", (float, type(None)), required=False,
                    default=1.0)
        if beta is not None:
            _positive(beta, f"{path}.beta")
        return {"scheme": scheme, "beta": beta}
    if scheme == "balanced_orthogonal":
        _reject_unknown(init, path, {"scheme", "sigma_profile"})
        profile = _get(init, path, "sigma_profile", list)
        for i, v in enumerate(profile):
            if not isinstance(v, (int, float)) or v < 0:
                _fail(f"{path}.sigma_profile[{i}]", "must be non-negative")
        return {"scheme": scheme, "sigma_profile": [float(v) for v in profile]}
    if scheme == "saxe_aligned":
        _reject_unknown(init, path, {"scheme", "sigma0"})
        sigma0 = _get(init, path, "sigma0", (int, float, list))
        values = sigma0 if isinstance(sigma0, list) else [sigma0]
        for i, v in enumerate(values):
            if not isinstance(v, (int, float)) or v <= 0:
                _fail(f"{path}.sigma0", "entries must be positive numbers")
        return {"scheme": scheme, "sigma0": sigma0}
    _fail(f"{path}.scheme", f"unknown scheme {scheme!r}")


def _validate_mixture(data: dict, path: str, dims: list[int]) -> dict:
    allowed = {"components", "samples_per_component", "dim", "targets",
               "teacher_scale"}
    _reject_unknown(data, path, allowed)
    out = {
        "components": _positive(_get(data, path, "components", int),
                                f"{path}.components"),
        "samples_per_component": _positive(
            _get(data, path, "samples_per_component", int),
            f"{path}.samples_per_component"),
        "dim": _positive(_get(data, path, "dim", int), f"{path}.dim"),
        "targets": _positive(_get(data, path, "targets", int),
                             f"{path}.targets"),
        "teacher_scale": _positive(
            _get(data, path, "teacher_scale", float, required=False,
                 default=1.0),
            f"{path}.teacher_scale"),
    }
    if out["dim"] != dims[0]:
        _fail(f"{path}.dim", f"{out['dim']} does not match dims[0] = {dims[0]}")
    if out["targets"] != dims[-1]:
        _fail(f"{path}.targets",
              f"{out['targets']} does not match dims[-1] = {dims[-1]}")
    return out


def validate_config(raw: dict) -> dict:
    """Normalize and validate a config dict; raises ConfigError on problems."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    version = _get(raw, "", "schema_version", int)
    if version != SCHEMA_VERSION:
        _fail("schema_version", f"expected {SCHEMA_VERSION}, got {version}")
    kind = _get(raw, "", "kind", str)
    if kind not in KINDS:
        _fail("kind", f"must be one of {KINDS}, got {kind!r}")
    seed = _get(raw, "", "seed", int, required=False, default=0)
    if seed < 0:
        _fail("seed", "must be non-negative")

    common = {"schema_version", "kind", "seed"}
    out = {"schema_version": version, "kind": kind, "seed": seed}

    if kind in ("lnn_train", "mode_compare"):
        _reject_unknown(raw, "", common | {"dims", "init", "data", "flow"})
        dims = _validate_dims(_get(raw, "", "dims", list), "dims")
        out["dims"] = dims
        out["data"] = _validate_mixture(_get(raw, "", "data", dict), "data", dims)
        out["flow"] = _validate_flow(_get(raw, "", "flow", dict), "flow")
        init = _validate_init(_get(raw, "", "init", dict), "init")
        if kind == "mode_compare" and init["scheme"] != "saxe_aligned":
            _fail("init.scheme", "mode_compare requires the saxe_aligned scheme")
        out["init"] = init
        return out

    if kind == "relu_train":
        _reject_unknown(raw, "", common | {"dims", "init", "data", "flow"})
        dims = _validate_dims(_get(raw, "", "dims", list), "dims")
        out["dims"] = dims
        data = _get(raw, "", "data", dict)
        _reject_unknown(data, "data", {"images", "labels", "subset"})
        subset = _get(data, "data", "subset", (int, type(None)),
                      required=False, default=None)
        if subset is not None:
            _positive(subset, "data.subset")
        out["data"] = {
            "images": _get(data, "data", "images", str),
            "labels": _get(data, "data", "labels", str),
            "subset": subset,
        }
        out["flow"] = _validate_flow(_get(raw, "", "flow", dict), "flow")
        init = _get(raw, "", "init", dict, required=False,
                    default={"scheme": "glorot", "beta": None})
        init = _validate_init(init, "init")
        if init["scheme"] != "glorot":
            _fail("init.scheme", "relu_train supports only the glorot scheme")
        out["init"] = init
        return out

    # bound_sweep
    allowed = common | {"layers", "kappa1", "kappa2", "sigma_yx_norm", "u0",
                        "tau", "steps", "record_every"}
    _reject_unknown(raw, "", allowed)
    layers = _get(raw, "", "layers", list)
    if not layers:
        _fail("layers", "must list at least one depth")
    for i, depth in enumerate(layers):
        if not isinstance(depth, int) or depth < 2:
            _fail(f"layers[{i}]", f"depth must be an integer >= 2, got {depth!r}")
    kappa2 = _get(raw, "", "kappa2", float)
    if not 0.0 <= kappa2 <= 1.0:
        _fail("kappa2", f"must lie in [0, 1], got {kappa2}")
    out.update({
        "layers": layers,
        "kappa1": _positive(_get(raw, "", "kappa1", float), "kappa1"),
        "kappa2": kappa2,
        "sigma_yx_norm": _positive(_get(raw, "", "sigma_yx_norm", float),
                                   "sigma_yx_norm"),
        "u0": _positive(_get(raw, "", "u0", float), "u0"),
        "tau": _positive(
            _get(raw, "", "tau", float, required=False, default=1000.0), "tau"),
        "steps": _positive(
            _get(raw, "", "steps", int, required=False, default=4000), "steps"),
        "record_every": _positive(
            _get(raw, "", "record_every", int, required=False, default=1),
            "record_every"),
    })
    return out


def load_config(path) -> dict:
    """Read and validate a JSON config file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return validate_config(raw)


def config_hash(cfg: dict) -> str:
    """Stable hash of a config for provenance stamping."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def preset_fig1(variant: str = "two_matrix") -> dict:
    """Configs for the synthetic-regression figure reproduction.

    ``two_matrix``/``four_matrix`` train the 10->6->3 and 10->8->6->4->3
    stacks on the Gaussian-mixture task; ``bound_sweep`` integrates the
    growth bound at the margins measured on the two-matrix run for depths
    2, 3, and 4.
    """
    if variant == "two_matrix":
        dims = [10, 6, 3]
    elif variant == "four_matrix":
        dims = [10, 8, 6, 4, 3]
    elif variant == "bound_sweep":
        return validate_config({
            "schema_version": SCHEMA_VERSION,
            "kind": "bound_sweep",
            "seed": FIG1_SEED,
            **BOUND_SWEEP_DEFAULTS,
        })
    else:
        raise ConfigError(
            f"unknown fig1 variant {variant!r}; expected two_matrix, "
            "four_matrix, or bound_sweep"
        )
    return validate_config({
        "schema_version": SCHEMA_VERSION,
        "kind": "lnn_train",
        "seed": FIG1_SEED,
        "dims": dims,
        "init": {"scheme": "glorot", "beta": FIG1_BETA},
        "data": {**FIG1_MIXTURE, "teacher_scale": FIG1_TEACHER_SCALE},
        "flow": {"eta": FIG1_ETA, "steps": FIG1_STEPS,
                 "record_every": FIG1_RECORD_EVERY},
    })


def preset_fig2(images, labels, subset: int | None = FIG2_SUBSET) -> dict:
    """Config for the deep ReLU classification run on IDX-format data."""
    return validate_config({
        "schema_version": SCHEMA_VERSION,
        "kind": "relu_train",
        "seed": FIG1_SEED,
        "dims": list(FIG2_DIMS),
        "init": {"scheme": "glorot", "beta": None},
        "data": {"images": str(images), "labels": str(labels),
                 "subset": subset},
        "flow": {"eta": FIG2_ETA, "steps": FIG2_STEPS,
                 "record_every": FIG2_RECORD_EVERY},
    })
