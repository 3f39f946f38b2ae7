"""Backend selection for the hot loops.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy fallback in ``_pykernels`` is used. Setting ``SPINECARVE_PURE_PYTHON=1``
forces the fallback.
"""

import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("SPINECARVE_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

BACKEND = "cython" if _ckernels is not None else "python"


def _impl(backend):
    return BACKENDS[backend or BACKEND]


def squared_edt(features, return_indices=False, backend=None):
    """Exact squared Euclidean distance from every voxel to the nearest feature voxel.

    Parameters
    ----------
    features : ndarray of bool
        True at feature voxels. Must contain at least one True.
    return_indices : bool
        Also return, per voxel, the flat (row-major) index of a nearest feature.
    backend : {"cython", "python"}, optional
        Override the import-time selection.

    Returns
    -------
    sqdist : ndarray of float64
    indices : ndarray of int64, only if ``return_indices``
    """
    impl = _impl(backend)
    features = np.asarray(features, dtype=bool)
    f = np.where(features, 0.0, np.inf)
    idx = np.where(features, np.arange(features.size).reshape(features.shape), -1).astype(np.int64)
    for axis in range(features.ndim):
        fa = np.ascontiguousarray(np.moveaxis(f, axis, -1))
        ia = np.ascontiguousarray(np.moveaxis(idx, axis, -1))
        shape = fa.shape
        f2 = fa.reshape(-1, shape[-1])
        i2 = ia.reshape(-1, shape[-1])
        impl.edt_rows(f2, i2)
        f = np.moveaxis(f2.reshape(shape), -1, axis)
        idx = np.moveaxis(i2.reshape(shape), -1, axis)
    f = np.ascontiguousarray(f)
    if return_indices:
        return f, np.ascontiguousarray(idx)
    return f


def atlas_sqdist(phi, atlas, backend=None):
    """Squared L2 distance between a flat field and every row of ``atlas``."""
    out = np.empty(atlas.shape[0], dtype=np.float64)
    _impl(backend).atlas_sqdist(np.ascontiguousarray(phi, dtype=np.float64).ravel(), atlas, out)
    return out


def atlas_weighted_sum(weights, atlas, backend=None):
    """Weighted sum of atlas rows, flat."""
    out = np.empty(atlas.shape[1], dtype=np.float64)
    _impl(backend).atlas_weighted_sum(np.ascontiguousarray(weights, dtype=np.float64), atlas, out)
    return out


def interface_distance(offsets, valid, nearest, reach, normals=None, patch_radius=0.0, backend=None):
    """Distance from every voxel to a sampled interface.

    Parameters
    ----------
    offsets : ndarray, shape (*dims, ndim)
        For each valid band voxel, the vector from its center to its crossing point.
    valid : ndarray of bool, shape dims
        Band voxels that carry a crossing point.
    nearest : ndarray of int64, shape dims
        Flat index of the nearest valid voxel (by center distance), the starting guess.
    reach : int
        Half-width of the final search window around each propagated owner.
    normals : ndarray, shape (*dims, ndim), optional
        Unit interface normal at each crossing point. With ``patch_radius``
        each crossing point stands for a flat disk, which follows a smooth
        interface to second order between samples.
    patch_radius : float
        Disk radius; 0 treats crossing points as isolated points.

    Returns
    -------
    ndarray, shape dims
    """
    impl = _impl(backend)
    dims = valid.shape
    off = np.asarray(offsets, dtype=np.float64)
    nrm = np.zeros_like(off) if normals is None else np.asarray(normals, dtype=np.float64)
    if len(dims) == 2:
        off = np.concatenate([np.zeros(dims + (1,)), off], axis=-1)[None]
        nrm = np.concatenate([np.zeros(dims + (1,)), nrm], axis=-1)[None]
        rz = 0
    else:
        rz = reach
    dims3 = off.shape[:3]
    off = np.ascontiguousarray(off)
    owner = np.ascontiguousarray(np.asarray(nearest, dtype=np.int64).reshape(dims3)).copy()
    grid = np.moveaxis(np.indices(dims3, dtype=np.float64), 0, -1)
    src = np.moveaxis(np.array(np.unravel_index(owner, dims3), dtype=np.float64), 0, -1)
    foot = np.ascontiguousarray(src + off.reshape(-1, 3)[owner.ravel()].reshape(off.shape))
    dist = np.ascontiguousarray(np.sqrt(((foot - grid) ** 2).sum(axis=-1)))
    impl.closest_point_sweep(foot, dist, owner)
    vmask = np.ascontiguousarray(np.asarray(valid).reshape(dims3), dtype=np.uint8)
    nrm = np.ascontiguousarray(nrm)
    impl.refine_owner(owner, vmask, off, nrm, float(patch_radius), dist, rz, reach, reach)
    return dist.reshape(dims)
