import itertools

import numpy as np
import pytest

from spinecarve.phantoms import PhantomSpec, generate

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def brute_force_boundary_distance(mask):
    """Distance from each voxel center to the nearest voxel center of the other label, O(N^2)."""
    coords = np.argwhere(np.ones(mask.shape, dtype=bool)).astype(np.float64)
    labels = mask.ravel()
    out = np.empty(len(coords))
    for value in (True, False):
        src = coords[labels == value]
        dst = coords[labels != value]
        best = np.full(len(src), np.inf)
        for start in range(0, len(dst), 2048):
            block = dst[start:start + 2048]
            d = ((src[:, None, :] - block[None, :, :]) ** 2).sum(axis=-1)
            best = np.minimum(best, d.min(axis=1))
        out[labels == value] = np.sqrt(best)
    return out.reshape(mask.shape)


def explicit_kde_1d(x, samples, bandwidth):
    """Direct Gaussian kernel sum, one loop over samples."""
    x = np.asarray(x, dtype=np.float64)
    total = np.zeros_like(x)
    for s in np.asarray(samples, dtype=np.float64).ravel():
        total += np.exp(-0.5 * ((x - s) / bandwidth) ** 2)
    return total / (len(np.ravel(samples)) * bandwidth * np.sqrt(2 * np.pi))


def explicit_kde_nd(dims, coords, bandwidth):
    """Isotropic d-dimensional Gaussian sum at every voxel center."""
    grid = np.indices(dims, dtype=np.float64)
    d = len(dims)
    total = np.zeros(dims)
    for c in coords:
        sq = sum((grid[k] - c[k]) ** 2 for k in range(d))
        total += np.exp(-0.5 * sq / bandwidth ** 2)
    return total / (len(coords) * (bandwidth * np.sqrt(2 * np.pi)) ** d)


def random_mask(rng, dims, p=None):
    p = rng.uniform(0.1, 0.9) if p is None else p
    while True:
        m = rng.random(dims) < p
        if m.any() and not m.all():
            return m


def neighbours(shape):
    return [s for s in itertools.product((-1, 0, 1), repeat=len(shape)) if any(s)]


@pytest.fixture(scope="session")
def easy_set():
    spec = PhantomSpec(dims=(48, 48), n_shapes=6, fg_intensity_mixture=[(1.0, 0.8, 0.05)],
                       bg_intensity_mixture=[(1.0, 0.2, 0.05)], overlap=0.0, seed=11)
    return generate(spec)


@pytest.fixture(scope="session")
def hard_set():
    return generate(PhantomSpec(dims=(48, 48), n_shapes=6, overlap=0.6, seed=5))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
