"""Pure-numpy versions of the compiled kernels in ``_ckernels.pyx``.

The 1-D distance pass here is a brute-force min-plus product over each row
(O(n^2) per row, vectorized in row chunks) instead of the linear-time lower
envelope. Both are exact, so squared distances agree bit for bit.
"""

import itertools

import numpy as np

# cap on the temporary (rows, n, n) block
_CHUNK_ELEMS = 1 << 22


def edt_rows(f, idx):
    m, n = f.shape
    q = np.arange(n, dtype=np.float64)
    offsets = (q[None, :] - q[:, None]) ** 2  # [p, q]
    step = max(1, _CHUNK_ELEMS // (n * n))
    for start in range(0, m, step):
        block = f[start:start + step]
        cand = block[:, :, None] + offsets[None, :, :]
        best = np.argmin(cand, axis=1)
        rows = np.arange(block.shape[0])[:, None]
        newf = np.take_along_axis(cand, best[:, None, :], axis=1)[:, 0, :]
        newi = idx[start:start + step][rows, best]
        f[start:start + step] = newf
        idx[start:start + step] = newi


def atlas_sqdist(phi, atlas, out):
    # cumsum accumulates left to right like the compiled loop; sum() would pair
    d = atlas - phi[None, :]
    out[:] = np.cumsum(d * d, axis=1)[:, -1]


def atlas_weighted_sum(w, atlas, out):
    out[:] = np.einsum("i,ij->j", w, atlas)


def _window(n, k):
    """Destination and source index ranges along one axis for offset ``k``."""
    if k == 1:
        return slice(0, n - 1), slice(1, n)
    if k == -1:
        return slice(1, n), slice(0, n - 1)
    return slice(None), slice(None)


def closest_point_sweep(foot, dist, owner, max_rounds=1 << 30):
    """Closest-point propagation; same contract and update order as the compiled sweep.

    For offset ``s`` the grid is processed one slab at a time along the first
    axis where ``s`` is nonzero, source slab first, so each slab update is a
    single vectorized step.
    """
    shape = dist.shape
    grid = np.moveaxis(np.indices(shape, dtype=np.float64), 0, -1)
    for _ in range(max_rounds):
        changed = False
        for s in itertools.product((-1, 0, 1), repeat=3):
            if not any(s) or any(n == 1 and k != 0 for n, k in zip(shape, s)):
                continue
            lead = next(axis for axis, k in enumerate(s) if k)
            n = shape[lead]
            order = range(n - 2, -1, -1) if s[lead] == 1 else range(1, n)
            dst_rest = [_window(shape[axis], s[axis]) for axis in range(3)]
            for i in order:
                dst = list(dst_rest)
                src = [w[1] for w in dst_rest]
                dst = [w[0] for w in dst]
                dst[lead], src[lead] = i, i + s[lead]
                dst, src = tuple(dst), tuple(src)
                cand = foot[src]
                diff = cand - grid[dst]
                d = np.sqrt((diff * diff).sum(axis=-1))
                better = d < dist[dst] - 1e-12
                if better.any():
                    changed = True
                    dist[dst] = np.where(better, d, dist[dst])
                    foot[dst] = np.where(better[..., None], cand, foot[dst])
                    owner[dst] = np.where(better, owner[src], owner[dst])
        if not changed:
            break


def refine_owner(owner, valid, off, normal, rho, dist, rz, ry, rx):
    dims = dist.shape
    grid = np.indices(dims).reshape(3, -1)
    owner_idx = np.array(np.unravel_index(owner.ravel(), dims))
    bounds = np.array(dims)[:, None]
    flat_valid = valid.ravel().astype(bool)
    flat_off = np.moveaxis(off, -1, 0).reshape(3, -1)
    flat_normal = np.moveaxis(normal, -1, 0).reshape(3, -1)
    best = dist.ravel() ** 2
    for shift in itertools.product(range(-rz, rz + 1), range(-ry, ry + 1), range(-rx, rx + 1)):
        cand = owner_idx + np.array(shift)[:, None]
        inside = np.all((cand >= 0) & (cand < bounds), axis=0)
        cand = np.where(inside, cand, owner_idx)
        flat = np.ravel_multi_index(tuple(cand), dims)
        v = grid - (cand + flat_off[:, flat])
        d = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        n = flat_normal[:, flat]
        h = v[0] * n[0] + v[1] * n[1] + v[2] * n[2]
        lat = np.sqrt(np.maximum(d - h * h, 0.0))
        d = np.where(lat > rho, h * h + (lat - rho) * (lat - rho), h * h)
        best = np.where(flat_valid[flat] & (d < best), d, best)
    dist[...] = np.sqrt(best).reshape(dims)
