import numpy as np
import pytest

import layerlab as ll
from layerlab.errors import ShapeError
from layerlab.relu import run_relu_training

from conftest import fd_loss_gradient


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def all_positive_net(rng, dims):
    """Weights and inputs chosen so every pre-activation is positive."""
    weights = [np.abs(rng.standard_normal((b, a))) + 0.3
               for a, b in zip(dims[:-1], dims[1:])]
    return ll.LinearNet(weights)


class TestReluForward:
    def test_all_positive_equals_softmax_linear(self, rng):
        net = all_positive_net(rng, (4, 5, 3))
        x = np.abs(rng.standard_normal(4)) + 0.1
        probs, masks = ll.relu_forward(net, x)
        assert all(m.all() for m in masks)
        logits = ll.end_to_end(net) @ x
        expected = np.exp(logits - logits.max())
        expected /= expected.sum()
        assert np.allclose(probs, expected, atol=1e-12)

    def test_probabilities_sum_to_one(self, rng):
        net = ll.glorot_init((6, 5, 4), beta=4.0, seed=1)
        for _ in range(10):
            probs, _ = ll.relu_forward(net, rng.standard_normal(6))
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(probs >= 0)

    def test_masked_row_has_no_influence(self, rng):
        net = ll.glorot_init((5, 4, 3), beta=4.0, seed=3)
        x = rng.standard_normal(5)
        probs, masks = ll.relu_forward(net, x)
        off_rows = np.nonzero(~masks[0])[0]
        assert off_rows.size > 0, "fixture should mask something"
        row = off_rows[0]
        # a perturbation small enough to keep the pre-activation negative
        margin = -(net.weights[0] @ x)[row]
        bumped = [w.copy() for w in net.weights]
        bumped[0][row] += 0.01 * margin / max(np.abs(x).max(), 1e-9) * np.sign(x)
        probs2, masks2 = ll.relu_forward(ll.LinearNet(bumped), x)
        assert all(np.array_equal(a, b) for a, b in zip(masks, masks2))
        assert np.allclose(probs, probs2, atol=1e-12)

    def test_matches_scalar_reference(self, rng):
        net = ll.glorot_init((6, 5, 4, 3), beta=4.0, seed=5)
        x = rng.standard_normal(6)
        probs, masks = ll.relu_forward(net, x)
        h = x.copy()
        for w in net.weights:
            z = np.array([max(0.0, float(row @ h)) for row in w])
            h = z
        expected = np.exp(h - h.max())
        expected /= expected.sum()
        assert np.allclose(probs, expected, atol=1e-12)
        # strict positivity convention: exact zeros mask off
        zero_net = ll.LinearNet([np.zeros((2, 2))])
        _, zero_masks = ll.relu_forward(zero_net, np.ones(2))
        assert not zero_masks[0].any()


class TestMaskedGradient:
    def test_all_masks_zero(self, rng):
        net = ll.glorot_init((4, 3, 2), beta=4.0, seed=0)
        masks = [np.zeros(3), np.zeros(2)]
        for layer in range(2):
            g = ll.masked_layer_gradient(net, rng.standard_normal(4),
                                         np.eye(2)[0], masks, layer)
            assert np.array_equal(g, np.zeros_like(g))

    def test_single_layer_all_ones_is_softmax_gradient(self, rng):
        net = ll.glorot_init((5, 3), beta=4.0, seed=2)
        x = rng.standard_normal(5)
        y = np.eye(3)[1]
        g = ll.masked_layer_gradient(net, x, y, [np.ones(3)], 0)
        logits = net.weights[0] @ x
        p = np.exp(logits - logits.max())
        p /= p.sum()
        assert np.allclose(g, np.outer(y - p, x), atol=1e-12)

    def test_masked_rows_are_zero(self, rng):
        net = ll.glorot_init((6, 5, 4), beta=4.0, seed=4)
        x = rng.standard_normal(6)
        _, masks = ll.relu_forward(net, x)
        g = ll.masked_layer_gradient(net, x, np.eye(4)[0], masks, 0)
        assert np.all(g[~masks[0]] == 0)

    @pytest.mark.parametrize("dims", [(4, 3, 2), (5, 4, 4, 3), (6, 5, 4, 3, 2)])
    def test_matches_finite_differences(self, dims):
        rng = np.random.default_rng(sum(dims))
        net = ll.glorot_init(dims, beta=4.0, seed=9)
        x = rng.standard_normal(dims[0])
        y = np.eye(dims[-1])[0]
        _, masks = ll.relu_forward(net, x)

        def loss(weights):
            o = ll.masked_forward(ll.LinearNet(weights), x, masks)
            return ll.cross_entropy(o[None, :], y[None, :])

        for layer in range(net.depth):
            g = ll.masked_layer_gradient(net, x, y, masks, layer)
            if np.linalg.norm(g) < 1e-12:
                continue
            fd = fd_loss_gradient(loss, net.weights, layer)
            rel = np.linalg.norm(g + fd) / np.linalg.norm(g)
            assert rel <= 1e-6


class TestPerSampleResidual:
    def test_zero_gradient_sample(self, rng):
        net = ll.glorot_init((4, 3, 2), beta=4.0, seed=1)
        masks = [np.zeros(3), np.zeros(2)]
        x = rng.standard_normal(4)
        stepped = ll.single_sample_step(net, x, np.eye(2)[0], masks, 1e-3)
        res = ll.per_sample_balance_residual(net, stepped, masks)
        assert np.allclose(res, 0.0, atol=1e-15)

    def test_quadratic_in_step_size(self, rng):
        net = ll.glorot_init((6, 5, 4, 3), beta=4.0, seed=11)
        x = rng.standard_normal(6)
        y = np.eye(3)[1]
        _, masks = ll.relu_forward(net, x)
        scaled = []
        for eta in (1e-3, 1e-4, 1e-5):
            stepped = ll.single_sample_step(net, x, y, masks, eta)
            res = ll.per_sample_balance_residual(net, stepped, masks)
            scaled.append(res / eta**2)
        scaled = np.array(scaled)
        ref = scaled[0]
        assert np.all(ref > 0)
        for row in scaled[1:]:
            assert np.all(row / ref <= 2.0) and np.all(row / ref >= 0.5)

    def test_all_ones_masks_reduce_to_linear_case(self, rng):
        net = all_positive_net(rng, (4, 4, 3))
        x = np.abs(rng.standard_normal(4)) + 0.2
        y = np.eye(3)[2]
        probs, masks = ll.relu_forward(net, x)
        assert all(m.all() for m in masks)
        eta = 1e-4
        stepped = ll.single_sample_step(net, x, y, masks, eta)
        res = ll.per_sample_balance_residual(net, stepped, masks)
        # with identity masks the residual is the plain network's
        # adjacent-Gram change difference
        def gap(net_):
            hi, lo = net_.weights[1], net_.weights[0]
            return hi.T @ hi - lo @ lo.T
        direct = np.linalg.norm(gap(stepped) - gap(net))
        assert res[0] == pytest.approx(direct, rel=1e-9)


class TestSymmetryResidual:
    def test_single_sample_cross_terms_empty(self, rng):
        net = ll.glorot_init((6, 5, 4, 3), beta=4.0, seed=11)
        batch = ll.ClassBatch(inputs=rng.standard_normal((1, 6)),
                              targets=np.eye(3)[[1]])
        stepped, masks, _ = ll.batch_step(net, batch, 1e-4)
        res = ll.symmetry_residual(net, stepped, masks)
        assert np.array_equal(res.cross_terms, np.zeros(net.depth - 1))

    def test_duplicated_sample_matches_single(self, rng):
        net = ll.glorot_init((6, 5, 4, 3), beta=4.0, seed=11)
        x = rng.standard_normal(6)
        y = np.eye(3)[0]
        single = ll.ClassBatch(inputs=x[None], targets=y[None])
        double = ll.ClassBatch(inputs=np.vstack([x, x]),
                               targets=np.vstack([y, y]))
        s1, m1, _ = ll.batch_step(net, single, 1e-4)
        s2, m2, _ = ll.batch_step(net, double, 1e-4)
        r1 = ll.symmetry_residual(net, s1, m1)
        r2 = ll.symmetry_residual(net, s2, m2)
        # duplicating a sample leaves the batch step, and hence the
        # aggregate residual, exactly where the single sample put it
        assert np.allclose(r1.total, r2.total, rtol=1e-10)
        assert all(np.allclose(a, b) for a, b in
                   zip(s1.weights, s2.weights))

    def test_all_positive_batch_scales_quadratically(self, rng):
        net = all_positive_net(rng, (4, 4, 3))
        batch = ll.ClassBatch(
            inputs=np.abs(rng.standard_normal((3, 4))) + 0.2,
            targets=np.eye(3)[[0, 1, 2]],
        )
        totals = []
        for eta in (1e-3, 1e-4, 1e-5):
            stepped, masks, _ = ll.batch_step(net, batch, eta)
            assert all(m.all() for m in masks)
            res = ll.symmetry_residual(net, stepped, masks)
            totals.append(res.total / eta**2)
        ref = totals[0]
        for row in totals[1:]:
            assert np.all(np.abs(row / ref - 1.0) <= 0.5)

    def test_differing_masks_break_symmetry_at_first_order(self, rng):
        net = ll.glorot_init((6, 5, 4, 3), beta=4.0, seed=11)
        X = rng.standard_normal((2, 6))
        _, masks = ll.relu_forward_batch(net, X)
        assert any(not np.array_equal(m[0], m[1]) for m in masks)
        batch = ll.ClassBatch(inputs=X, targets=np.eye(3)[[0, 2]])
        firsts = []
        for eta in (1e-3, 1e-4, 1e-5):
            stepped, m, _ = ll.batch_step(net, batch, eta)
            res = ll.symmetry_residual(net, stepped, m)
            firsts.append(res.total / eta)
        firsts = np.array(firsts)
        # residual / eta approaches a positive constant: first order survives
        assert np.all(firsts[-1] > 0.5 * firsts[0])
        assert np.all(firsts[-1] > 1e-6)


class TestMaskAgreement:
    def test_identical_masks(self):
        masks = [np.ones((4, 3), dtype=bool), np.ones((4, 2), dtype=bool)]
        labels = np.array([0, 0, 1, 1])
        assert ll.mask_agreement(masks, labels, 0) == 1.0

    def test_complementary_masks(self):
        m = np.array([[True, False], [False, True]])
        masks = [m, m.copy()]
        labels = np.array([0, 0])
        assert ll.mask_agreement(masks, labels, 0) == 0.0

    def test_matches_pairwise_count(self, rng):
        m, widths = 12, (5, 4, 3)
        masks = [rng.random((m, w)) > 0.5 for w in widths]
        labels = rng.integers(0, 3, m)
        for layer in range(3):
            got = ll.mask_agreement(masks, labels, layer)
            same = agree = 0
            for i in range(m):
                for j in range(i + 1, m):
                    if labels[i] != labels[j]:
                        continue
                    same += 1
                    if all(np.array_equal(mk[i], mk[j]) for mk in masks[layer:]):
                        agree += 1
            assert got == pytest.approx(agree / same)

    def test_monotone_in_layer(self, rng):
        m = 30
        masks = [rng.random((m, w)) > 0.5 for w in (6, 5, 4)]
        labels = rng.integers(0, 2, m)
        values = [ll.mask_agreement(masks, labels, l) for l in range(3)]
        assert np.all(np.diff(values) >= 0)

    def test_no_pairs_raises(self):
        masks = [np.ones((2, 2), dtype=bool)]
        with pytest.raises(ValueError):
            ll.mask_agreement(masks, np.array([0, 1]), 0)


class TestTrainRelu:
    def test_toy_batch_learns(self, rng):
        # linearly separable two-class task in four dimensions; the seed
        # matters because a rectified output row that starts dead for one
        # class never recovers on a batch this small
        m = 10
        labels = np.arange(m) % 2
        X = rng.standard_normal((m, 4)) * 0.3
        X[:, 0] += np.where(labels == 0, 2.0, -2.0)
        targets = np.eye(2)[labels]
        batch = ll.ClassBatch(inputs=X, targets=targets)
        net = ll.glorot_init((4, 16, 2), beta=32.0, seed=6)
        traj = ll.train_relu(net, batch,
                             ll.FlowConfig(eta=0.5, steps=800, record_every=40))
        assert traj.losses[-1] < 0.1

    def test_seven_layer_configuration_accepted(self):
        dims = (784, 100, 100, 100, 100, 100, 100, 10)
        net = ll.glorot_init(dims, beta=ll.glorot_beta_for_relu(dims), seed=0)
        assert net.depth == 7
        assert net.dims == dims

    def test_zero_eta_flat(self, rng):
        batch = ll.ClassBatch(inputs=rng.standard_normal((6, 4)),
                              targets=np.eye(2)[rng.integers(0, 2, 6)])
        net = ll.glorot_init((4, 5, 2), beta=4.0, seed=0)
        traj, final = run_relu_training(
            net, batch, ll.FlowConfig(eta=0.0, steps=40, record_every=10))
        assert np.allclose(traj.layer_norms, traj.layer_norms[0])
        assert all(np.array_equal(a, b)
                   for a, b in zip(net.weights, final.weights))

    def test_records_residuals_and_agreement(self, rng):
        batch = ll.ClassBatch(inputs=rng.standard_normal((8, 4)),
                              targets=np.eye(2)[rng.integers(0, 2, 8)])
        net = ll.glorot_init((4, 6, 5, 2), beta=8.0, seed=3)
        traj = ll.train_relu(net, batch,
                             ll.FlowConfig(eta=0.1, steps=60, record_every=20))
        assert traj.growth_gaps.shape == (len(traj) - 1, 2)
        assert traj.cross_sample_gaps.shape == (len(traj) - 1, 2)
        assert traj.mask_agreement.shape == (len(traj), 3)

    def test_mask_shape_mismatch(self, rng):
        net = ll.glorot_init((4, 3, 2), beta=4.0, seed=0)
        with pytest.raises(ShapeError):
            ll.masked_forward(net, np.ones(4), [np.ones(2), np.ones(2)])
