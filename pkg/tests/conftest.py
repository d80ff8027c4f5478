import numpy as np
import pytest

import layerlab as ll


@pytest.fixture(scope="session")
def mixture_data():
    """Whitened synthetic regression task used across the suite."""
    spec = ll.MixtureSpec(components=3, samples_per_component=400, dim=10)
    return ll.make_mixture_regression(spec, n_targets=3, seed=2, teacher_scale=1.0)


@pytest.fixture(scope="session")
def mixture_cov(mixture_data):
    return ll.covariance(mixture_data)


def random_whitened_dataset(rng, d, k, m=40):
    """Small whitened dataset with random targets."""
    raw = ll.Dataset(
        inputs=rng.standard_normal((m, d)),
        targets=rng.standard_normal((m, k)),
    )
    return ll.whiten(raw)


def fd_loss_gradient(loss, weights, layer, h=1e-5):
    """Central-difference gradient of ``loss(weights)`` wrt one matrix."""
    out = np.zeros_like(weights[layer])
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            up = [w.copy() for w in weights]
            down = [w.copy() for w in weights]
            up[layer][i, j] += h
            down[layer][i, j] -= h
            out[i, j] = (loss(up) - loss(down)) / (2 * h)
    return out


def make_fake_digits(n, seed=0, size=28):
    """Deterministic 10-class blob images in MNIST-like uint8 format."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=n)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    images = np.empty((n, size, size))
    centers = [(6 + 8 * (c // 5), 4 + 5 * (c % 5)) for c in range(10)]
    for i, c in enumerate(labels):
        cy = centers[c][0] + rng.normal(0, 1.0)
        cx = centers[c][1] + rng.normal(0, 1.0)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 12.0)
        images[i] = np.clip(0.85 * bump + 0.10 * rng.random((size, size)), 0, 1)
    return (images * 255).astype(np.uint8), labels.astype(np.uint8)


def write_fake_idx(tmp_path, n, seed=0):
    """Write a synthetic digit set as an IDX pair; returns the two paths."""
    images, labels = make_fake_digits(n, seed=seed)
    images_path = tmp_path / "images-idx3-ubyte"
    labels_path = tmp_path / "labels-idx1-ubyte"
    ll.write_idx(images, labels, images_path, labels_path)
    return images_path, labels_path
