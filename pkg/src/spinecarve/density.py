"""Gaussian kernel density estimates over intensities and voxel locations."""

from dataclasses import dataclass, field

import numpy as np

from .errors import CoordinateOutOfRange, DimensionMismatch, EmptySamples, NonPositiveBandwidth

TABLE_RESOLUTION = 4096
DEFAULT_SPATIAL_BANDWIDTH = 2.0
DEFAULT_FLOOR = 1e-8
# floor for an automatic intensity bandwidth when every sample is identical
_MIN_AUTO_BANDWIDTH = 1.0 / 1024

_SQRT_2PI = np.sqrt(2.0 * np.pi)
# unique sample values processed per block when filling the lookup table
_BLOCK = 512


def _gauss_sum(points, values, counts, bandwidth):
    """sum_k counts[k] * N(points; values[k], bandwidth) / counts.sum(), blockwise."""
    points = np.asarray(points, dtype=np.float64)
    out = np.zeros(points.shape, dtype=np.float64)
    flat = out.reshape(-1)
    pts = points.reshape(-1)
    norm = 1.0 / (bandwidth * _SQRT_2PI * counts.sum())
    for start in range(0, len(values), _BLOCK):
        v = values[start:start + _BLOCK]
        c = counts[start:start + _BLOCK]
        z = (pts[:, None] - v[None, :]) / bandwidth
        flat += (np.exp(-0.5 * z * z) * c[None, :]).sum(axis=1)
    return out * norm


def multiset(samples):
    """Collapse samples to (sorted unique values, multiplicities)."""
    values, counts = np.unique(np.asarray(samples, dtype=np.float64).ravel(), return_counts=True)
    return values, counts.astype(np.float64)


def silverman_bandwidth(values, counts):
    """Rule-of-thumb ``1.06 * std * n**(-1/5)`` on a weighted multiset."""
    n = counts.sum()
    mean = (values * counts).sum() / n
    std = np.sqrt((counts * (values - mean) ** 2).sum() / n)
    return max(1.06 * std * n ** (-0.2), _MIN_AUTO_BANDWIDTH)


@dataclass(frozen=True, eq=False)
class IntensityKde:
    """1-D Gaussian KDE over a multiset of intensities in [0, 1].

    ``values``/``counts`` hold the multiset; ``table`` holds the density at
    ``TABLE_RESOLUTION`` equally spaced nodes covering [0, 1].
    """

    values: np.ndarray
    counts: np.ndarray
    bandwidth: float
    table: np.ndarray = field(repr=False)

    @property
    def n_samples(self):
        return int(self.counts.sum())

    @property
    def nodes(self):
        return np.linspace(0.0, 1.0, len(self.table))

    def exact(self, x):
        """Density by direct summation over the samples."""
        return _gauss_sum(x, self.values, self.counts, self.bandwidth)

    def __call__(self, x):
        return eval_intensity(self, x)

    def __eq__(self, other):
        if not isinstance(other, IntensityKde):
            return NotImplemented
        return (self.bandwidth == other.bandwidth
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.counts, other.counts)
                and np.array_equal(self.table, other.table))


def fit_intensity_kde(samples, bandwidth="auto", counts=None, resolution=TABLE_RESOLUTION):
    """Fit a Gaussian KDE to intensity samples and tabulate it on [0, 1].

    Parameters
    ----------
    samples : array_like
        Intensities in [0, 1]. Repeats are allowed and weigh accordingly.
    bandwidth : float or "auto"
        Kernel standard deviation; "auto" applies Silverman's rule.
    counts : array_like, optional
        Multiplicity of each entry of ``samples``. When given, ``samples`` are
        treated as distinct values.
    resolution : int
        Number of table nodes.

    Returns
    -------
    IntensityKde
    """
    if counts is None:
        values, counts = multiset(samples)
    else:
        values = np.asarray(samples, dtype=np.float64).ravel()
        counts = np.asarray(counts, dtype=np.float64).ravel()
        keep = counts > 0
        values, counts = values[keep], counts[keep]
        order = np.argsort(values, kind="stable")
        values, counts = values[order], counts[order]
    if values.size == 0:
        raise EmptySamples("intensity KDE needs at least one sample")
    if isinstance(bandwidth, str):
        if bandwidth != "auto":
            raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
        bandwidth = silverman_bandwidth(values, counts)
    bandwidth = float(bandwidth)
    if not bandwidth > 0:
        raise NonPositiveBandwidth(f"bandwidth must be positive, got {bandwidth}")
    nodes = np.linspace(0.0, 1.0, resolution)
    table = _gauss_sum(nodes, values, counts, bandwidth)
    return IntensityKde(values, counts, bandwidth, table)


def eval_intensity(kde, x):
    """Evaluate an intensity KDE.

    Inside [0, 1] the table is linearly interpolated; outside it the sum over
    samples is evaluated directly so the Gaussian tails stay exact.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.interp(x, kde.nodes, kde.table)
    outside = (x < 0.0) | (x > 1.0)
    if np.any(outside):
        out = np.where(outside, kde.exact(np.where(outside, x, 0.0)), out)
    return out if out.ndim else float(out)


def gaussian_matrix(n, bandwidth):
    """Dense (n, n) matrix of the 1-D normal density at integer offsets i - j."""
    k = np.arange(n, dtype=np.float64)
    z = (k[:, None] - k[None, :]) / bandwidth
    return np.exp(-0.5 * z * z) / (bandwidth * _SQRT_2PI)


def separable_blur(field, bandwidth):
    """Convolve with an isotropic Gaussian density, one axis at a time.

    The kernel is not truncated: each axis uses the full dense matrix, so the
    result equals the direct d-dimensional sum up to rounding.
    """
    out = np.asarray(field, dtype=np.float64)
    for axis, n in enumerate(out.shape):
        g = gaussian_matrix(n, bandwidth)
        out = np.moveaxis(np.tensordot(g, np.moveaxis(out, axis, 0), axes=(1, 0)), 0, axis)
    return np.ascontiguousarray(out)


@dataclass(frozen=True, eq=False)
class SpatialKde:
    """Isotropic Gaussian KDE over voxel coordinates.

    The coordinate multiset is stored as per-voxel multiplicities ``counts``;
    ``map`` is the density at every voxel center.
    """

    counts: np.ndarray
    bandwidth: float
    map: np.ndarray = field(repr=False)

    @property
    def dims(self):
        return self.counts.shape

    @property
    def n_samples(self):
        return int(self.counts.sum())

    def __eq__(self, other):
        if not isinstance(other, SpatialKde):
            return NotImplemented
        return (self.bandwidth == other.bandwidth
                and np.array_equal(self.counts, other.counts)
                and np.array_equal(self.map, other.map))


def _resolve_spatial_bandwidth(bandwidth):
    if isinstance(bandwidth, str):
        if bandwidth != "auto":
            raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
        bandwidth = DEFAULT_SPATIAL_BANDWIDTH
    bandwidth = float(bandwidth)
    if not bandwidth > 0:
        raise NonPositiveBandwidth(f"bandwidth must be positive, got {bandwidth}")
    return bandwidth


def spatial_kde_from_counts(counts, bandwidth="auto"):
    """Fit a spatial KDE from a grid of per-voxel sample multiplicities."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim not in (2, 3):
        raise DimensionMismatch("spatial KDE grid must be 2-D or 3-D")
    total = counts.sum()
    if total <= 0:
        raise EmptySamples("spatial KDE needs at least one sample")
    bandwidth = _resolve_spatial_bandwidth(bandwidth)
    density = separable_blur(counts, bandwidth) / total
    return SpatialKde(counts, bandwidth, density)


def fit_spatial_kde(samples, dims, bandwidth="auto"):
    """Fit a spatial KDE from integer voxel coordinates.

    Parameters
    ----------
    samples : array_like, shape (m, d)
        Voxel coordinates; repeats allowed.
    dims : sequence of int
        Grid extents the density map is evaluated on.
    bandwidth : float or "auto"
        Isotropic kernel standard deviation in voxels ("auto" = 2 voxels).
    """
    dims = tuple(int(d) for d in dims)
    coords = np.asarray(samples)
    if coords.size == 0:
        raise EmptySamples("spatial KDE needs at least one sample")
    coords = coords.reshape(-1, len(dims))
    if np.any(coords != np.round(coords)):
        raise CoordinateOutOfRange("coordinates must be integer voxel indices")
    coords = coords.astype(np.int64)
    if np.any(coords < 0) or np.any(coords >= np.array(dims)):
        raise CoordinateOutOfRange(f"coordinates outside grid {dims}")
    counts = np.zeros(dims, dtype=np.float64)
    np.add.at(counts, tuple(coords.T), 1.0)
    return spatial_kde_from_counts(counts, bandwidth)


def log_ratio_map(fg, bg, floor=DEFAULT_FLOOR):
    """Per-voxel ``log((bg + floor) / (fg + floor))`` of two spatial KDE maps."""
    a = fg.map if isinstance(fg, SpatialKde) else np.asarray(fg, dtype=np.float64)
    b = bg.map if isinstance(bg, SpatialKde) else np.asarray(bg, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"map dims differ: {a.shape} vs {b.shape}")
    return np.log(b + floor) - np.log(a + floor)
