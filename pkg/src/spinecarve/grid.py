"""Scalar fields, signed distances, redistancing and the Dice score.

Fields are plain numpy arrays with 2 or 3 axes in row-major order. Masks are
boolean arrays (True = foreground). Level-set fields follow the convention
``phi < 0`` inside the foreground; voxels with ``phi == 0`` are background.
"""

import itertools

import numpy as np

from .errors import AllBackground, AllForeground, DimensionMismatch
from .kernels import interface_distance, squared_edt

# magnitude given to foreground voxels whose estimated distance rounds to 0
_MIN_INSIDE = 1e-9
# window half-width searched around each propagated owner, per dimension
_REFINE_REACH = {2: 2, 3: 1}
# radius (voxels) of the flat interface patch each crossing point stands for
PATCH_RADIUS = 0.3
# Newton steps projecting band voxels onto the interpolated zero set
_NEWTON_STEPS = 3


def check_field(field, name="field"):
    """Return ``field`` as a float64 array after checking rank and finiteness."""
    arr = np.asarray(field, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise DimensionMismatch(f"{name} must be 2-D or 3-D, got {arr.ndim} axes")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_mask(mask, name="mask"):
    arr = np.asarray(mask)
    if arr.ndim not in (2, 3):
        raise DimensionMismatch(f"{name} must be 2-D or 3-D, got {arr.ndim} axes")
    return arr.astype(bool, copy=False)


def same_dims(*arrays):
    shapes = {tuple(np.shape(a)) for a in arrays}
    if len(shapes) != 1:
        raise DimensionMismatch(f"dimension mismatch: {sorted(shapes)}")


def _check_two_labels(mask):
    if not mask.any():
        raise AllBackground("mask has no foreground voxel")
    if mask.all():
        raise AllForeground("mask has no background voxel")


def threshold(phi):
    """Foreground mask of a level-set field (strict ``phi < 0``)."""
    return np.asarray(phi) < 0


def signed_distance_transform(mask):
    """Exact Euclidean signed distance of a binary mask, in voxel units.

    The boundary sits halfway between a foreground voxel and its background
    neighbour, so every voxel has ``|phi| >= 0.5`` and the transform of the
    complement is exactly the negated field.

    Raises
    ------
    AllForeground, AllBackground
        If the mask is uniform.
    """
    mask = check_mask(mask)
    _check_two_labels(mask)
    to_bg = np.sqrt(squared_edt(~mask))
    to_fg = np.sqrt(squared_edt(mask))
    return np.where(mask, -(to_bg - 0.5), to_fg - 0.5)


def _interface_offsets(phi, mask):
    """Sub-voxel offsets from interface voxels to the linear zero crossing.

    For each voxel with an opposite-label axis neighbour the crossing fraction
    along each axis is ``phi_i / (phi_i - phi_j)``; the local interface is the
    plane through those intercepts and the offset is the foot of the
    perpendicular from the voxel center.
    """
    ndim = phi.ndim
    inv_sq = np.zeros(phi.shape)
    inv_signed = np.zeros((ndim,) + phi.shape)
    touches = np.zeros(phi.shape, dtype=bool)
    for axis in range(ndim):
        best = np.full(phi.shape, np.inf)
        direction = np.zeros(phi.shape)
        for shift in (-1, 1):
            nb = np.roll(phi, -shift, axis=axis)
            nb_mask = np.roll(mask, -shift, axis=axis)
            valid = nb_mask != mask
            # np.roll wraps; the wrapped slab is not a neighbour
            edge = [slice(None)] * ndim
            edge[axis] = -1 if shift == 1 else 0
            valid[tuple(edge)] = False
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(valid, phi / (phi - nb), np.inf)
            take = frac < best
            best = np.where(take, frac, best)
            direction = np.where(take, float(shift), direction)
        has = np.isfinite(best)
        touches |= has
        zero = has & (best == 0.0)
        with np.errstate(divide="ignore"):
            inv = np.where(has & ~zero, 1.0 / best, 0.0)
        inv_sq += inv * inv
        inv_signed[axis] = direction * inv
        # a crossing exactly at the voxel center
        inv_sq[zero] = np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = np.where(touches, 1.0 / inv_sq, 0.0)
        offsets = inv_signed * d2[None]
    offsets[:, ~np.isfinite(inv_sq)] = 0.0
    offsets = np.nan_to_num(offsets, nan=0.0, posinf=0.0, neginf=0.0)
    return touches, offsets


def _interp(field, points):
    """Multilinear interpolation of ``field`` at ``points`` (ndim, k), clamped to the grid."""
    dims = np.array(field.shape)
    base = np.clip(np.floor(points).astype(np.int64), 0, (dims - 2)[:, None])
    frac = np.clip(points - base, 0.0, 1.0)
    out = np.zeros(points.shape[1])
    for corner in itertools.product((0, 1), repeat=field.ndim):
        weight = np.ones(points.shape[1])
        for axis, c in enumerate(corner):
            weight *= frac[axis] if c else 1.0 - frac[axis]
        out += weight * field[tuple(base[axis] + c for axis, c in enumerate(corner))]
    return out


def _band_feet(phi, mask):
    """Crossing points for every voxel within one (diagonal) step of the interface.

    Band voxels are projected onto the zero set of the multilinear
    interpolant of ``phi`` by a few Newton steps ``x - phi grad / |grad|^2``;
    where that lands implausibly far, axis-adjacent interface voxels fall back
    to the plane through the interpolated axis crossings.
    Returns the validity mask, the offsets (ndim, *shape) and unit normals
    (ndim, *shape; zero where the gradient vanishes).
    """
    touches, offsets = _interface_offsets(phi, mask)
    ndim = phi.ndim
    padded = np.pad(mask, 1, mode="edge")
    band = np.zeros_like(mask)
    for shift in itertools.product((-1, 0, 1), repeat=ndim):
        window = tuple(slice(1 + s, 1 + s + n) for s, n in zip(shift, phi.shape))
        band |= padded[window] != mask
    if min(phi.shape) < 2:
        return touches, offsets, np.zeros_like(offsets)
    grad = np.array(np.gradient(phi)).reshape((ndim,) + phi.shape)
    start = np.array(np.nonzero(band), dtype=np.float64)
    pts = start.copy()
    ok = np.ones(pts.shape[1], dtype=bool)
    upper = (np.array(phi.shape) - 1.0)[:, None]
    for _ in range(_NEWTON_STEPS):
        g = np.array([_interp(grad[k], pts) for k in range(ndim)])
        gsq = (g ** 2).sum(axis=0)
        ok &= gsq > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(gsq > 0, _interp(phi, pts) / gsq, 0.0)
        pts = np.clip(pts - step * g, 0.0, upper)
    g = np.array([_interp(grad[k], pts) for k in range(ndim)])
    gnorm = np.sqrt((g ** 2).sum(axis=0))
    ok &= gnorm > 0
    newton = pts - start
    # a projection landing farther than the band width is not trusted
    ok &= np.sqrt((newton ** 2).sum(axis=0)) <= np.sqrt(ndim) + 0.5
    trusted = np.zeros_like(mask)
    trusted[band] = ok
    idx = np.nonzero(band)
    for k in range(ndim):
        offsets[k][idx] = np.where(ok, newton[k], offsets[k][idx])
    normals = np.zeros_like(offsets)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(ndim):
            normals[k][idx] = np.where(gnorm > 0, g[k] / gnorm, 0.0)
    return touches | trusted, offsets, normals


def redistance(phi):
    """Reproject a level-set field to signed-distance form.

    The zero crossing is located to sub-voxel accuracy near the interface
    (linear interpolation between opposite-sign neighbours, or a Newton step
    along the gradient for diagonal neighbours). Every other voxel takes the
    distance to the nearest of those crossing points, found by propagating
    closest points outward from the band. Voxel labels (``phi < 0``) are
    preserved exactly.

    Raises
    ------
    AllForeground, AllBackground
        If ``phi`` does not change sign.
    """
    phi = check_field(phi, "phi")
    mask = phi < 0
    _check_two_labels(mask)
    valid, offsets, normals = _band_feet(phi, mask)
    _, nearest = squared_edt(valid, return_indices=True)
    dist = interface_distance(np.moveaxis(offsets, 0, -1), valid, nearest, _REFINE_REACH[phi.ndim],
                              np.moveaxis(normals, 0, -1), PATCH_RADIUS)
    return np.where(mask, -np.maximum(dist, _MIN_INSIDE), dist)


def dice(a, b):
    """Dice overlap ``2|A & B| / (|A| + |B|)``; two empty masks score 1.0."""
    a = check_mask(a, "a")
    b = check_mask(b, "b")
    same_dims(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def boundary(mask):
    """Foreground voxels with at least one background axis neighbour (grid edge counts as inside)."""
    mask = check_mask(mask)
    padded = np.pad(mask, 1, mode="edge")
    inner = tuple(slice(1, -1) for _ in range(mask.ndim))
    edge = np.zeros_like(mask)
    for axis in range(mask.ndim):
        for shift in (-1, 1):
            edge |= ~np.roll(padded, shift, axis=axis)[inner]
    return mask & edge


def ball(dims, center=None, radius=None):
    """Signed distance of a ball, used as a fallback initialization."""
    dims = tuple(int(d) for d in dims)
    if center is None:
        center = [(d - 1) / 2.0 for d in dims]
    if radius is None:
        radius = min(dims) / 4.0
    grid = np.indices(dims, dtype=np.float64)
    r = np.sqrt(sum((g - c) ** 2 for g, c in zip(grid, center)))
    return r - radius
