# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Mirrors ``_pykernels`` function for function."""

from libc.math cimport INFINITY, sqrt
from libc.stdint cimport int64_t

import numpy as np


def edt_rows(double[:, ::1] f, int64_t[:, ::1] idx):
    """In-place 1-D squared distance transform of every row (lower envelope of parabolas).

    ``f`` holds 0 at features (or squared distances from earlier passes) and inf
    elsewhere; ``idx`` carries the flat index of the feature each value came from.
    """
    cdef Py_ssize_t m = f.shape[0], n = f.shape[1]
    cdef Py_ssize_t r, q, k, j
    cdef double s, fq
    cdef Py_ssize_t[::1] v = np.empty(n, dtype=np.intp)
    cdef double[::1] z = np.empty(n + 1, dtype=np.float64)
    cdef double[::1] frow = np.empty(n, dtype=np.float64)
    cdef int64_t[::1] irow = np.empty(n, dtype=np.int64)

    with nogil:
        for r in range(m):
            k = -1
            for q in range(n):
                frow[q] = f[r, q]
                irow[q] = idx[r, q]
            for q in range(n):
                fq = frow[q]
                if fq == INFINITY:
                    continue
                if k < 0:
                    k = 0
                    v[0] = q
                    z[0] = -INFINITY
                    z[1] = INFINITY
                    continue
                s = ((fq + q * q) - (frow[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
                while s <= z[k]:
                    k -= 1
                    s = ((fq + q * q) - (frow[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
                k += 1
                v[k] = q
                z[k] = s
                z[k + 1] = INFINITY
            if k < 0:
                continue
            j = 0
            for q in range(n):
                while z[j + 1] < q:
                    j += 1
                f[r, q] = (q - v[j]) * (q - v[j]) + frow[v[j]]
                idx[r, q] = irow[v[j]]


def atlas_sqdist(const double[::1] phi, const double[:, ::1] atlas, double[::1] out):
    """out[i] = sum_j (atlas[i, j] - phi[j])**2, accumulated left to right."""
    cdef Py_ssize_t n = atlas.shape[0], npix = atlas.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc, d
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(npix):
                d = atlas[i, j] - phi[j]
                acc += d * d
            out[i] = acc


def atlas_weighted_sum(const double[::1] w, const double[:, ::1] atlas, double[::1] out):
    """out[j] = sum_i w[i] * atlas[i, j]."""
    cdef Py_ssize_t n = atlas.shape[0], npix = atlas.shape[1]
    cdef Py_ssize_t i, j
    cdef double wi
    with nogil:
        for j in range(npix):
            out[j] = 0.0
        for i in range(n):
            wi = w[i]
            if wi == 0.0:
                continue
            for j in range(npix):
                out[j] += wi * atlas[i, j]


def closest_point_sweep(double[:, :, :, ::1] foot, double[:, :, ::1] dist, int64_t[:, :, ::1] owner,
                        long max_rounds=1 << 30):
    """Closest-point propagation over a (nz, ny, nx) grid.

    ``foot[z, y, x]`` is the interface point currently assigned to a voxel,
    ``dist`` its distance and ``owner`` the band voxel it came from. For each
    of the 26 neighbour offsets ``s`` in turn, every voxel ``v`` adopts the
    point of ``v + s`` if it is closer, visiting voxels so that ``v + s`` is
    always updated before ``v``; information thus travels any distance along
    ``s`` in one pass. Rounds of 26 offsets repeat until nothing changes.
    """
    cdef Py_ssize_t nz = dist.shape[0], ny = dist.shape[1], nx = dist.shape[2]
    cdef Py_ssize_t z, y, x, zs, ys, xs, a, b, c
    cdef Py_ssize_t sz, sy, sx, z0, y0, x0, dz, dy, dx
    cdef double fz, fy, fx, d
    cdef int changed = 1, shift
    cdef long rounds = 0
    with nogil:
        while changed and rounds < max_rounds:
            changed = 0
            rounds += 1
            for shift in range(27):
                sz = shift // 9 - 1
                sy = (shift // 3) % 3 - 1
                sx = shift % 3 - 1
                if sz == 0 and sy == 0 and sx == 0:
                    continue
                # walk against the offset so the source is already updated
                dz = 1 if sz < 0 else -1
                dy = 1 if sy < 0 else -1
                dx = 1 if sx < 0 else -1
                z0 = nz - 1 if dz < 0 else 0
                y0 = ny - 1 if dy < 0 else 0
                x0 = nx - 1 if dx < 0 else 0
                for a in range(nz):
                    z = z0 + dz * a
                    zs = z + sz
                    if zs < 0 or zs >= nz:
                        continue
                    for b in range(ny):
                        y = y0 + dy * b
                        ys = y + sy
                        if ys < 0 or ys >= ny:
                            continue
                        for c in range(nx):
                            x = x0 + dx * c
                            xs = x + sx
                            if xs < 0 or xs >= nx:
                                continue
                            fz = foot[zs, ys, xs, 0] - z
                            fy = foot[zs, ys, xs, 1] - y
                            fx = foot[zs, ys, xs, 2] - x
                            d = sqrt(fz * fz + fy * fy + fx * fx)
                            if d < dist[z, y, x] - 1e-12:
                                dist[z, y, x] = d
                                foot[z, y, x, 0] = foot[zs, ys, xs, 0]
                                foot[z, y, x, 1] = foot[zs, ys, xs, 1]
                                foot[z, y, x, 2] = foot[zs, ys, xs, 2]
                                owner[z, y, x] = owner[zs, ys, xs]
                                changed = 1


def refine_owner(const int64_t[:, :, ::1] owner, const unsigned char[:, :, ::1] valid,
                 const double[:, :, :, ::1] off, const double[:, :, :, ::1] normal, double rho,
                 double[:, :, ::1] dist, int rz, int ry, int rx):
    """Search the band voxels in a window around each owner for a closer interface patch.

    Each band voxel carries a flat patch: a disk of radius ``rho`` centered at
    its crossing point with unit normal ``normal`` (a zero normal makes it a
    point).
    """
    cdef Py_ssize_t nz = dist.shape[0], ny = dist.shape[1], nx = dist.shape[2]
    cdef Py_ssize_t z, y, x, oz, oy, ox, zz, yy, xx
    cdef int64_t o
    cdef double best, d, fz, fy, fx, h, lat
    with nogil:
        for z in range(nz):
            for y in range(ny):
                for x in range(nx):
                    o = owner[z, y, x]
                    oz = o // (ny * nx)
                    oy = (o // nx) % ny
                    ox = o % nx
                    best = dist[z, y, x] * dist[z, y, x]
                    for zz in range(oz - rz, oz + rz + 1):
                        if zz < 0 or zz >= nz:
                            continue
                        for yy in range(oy - ry, oy + ry + 1):
                            if yy < 0 or yy >= ny:
                                continue
                            for xx in range(ox - rx, ox + rx + 1):
                                if xx < 0 or xx >= nx or not valid[zz, yy, xx]:
                                    continue
                                fz = z - (zz + off[zz, yy, xx, 0])
                                fy = y - (yy + off[zz, yy, xx, 1])
                                fx = x - (xx + off[zz, yy, xx, 2])
                                d = fz * fz + fy * fy + fx * fx
                                h = fz * normal[zz, yy, xx, 0] + fy * normal[zz, yy, xx, 1] + fx * normal[zz, yy, xx, 2]
                                lat = sqrt(max(d - h * h, 0.0))
                                if lat > rho:
                                    d = h * h + (lat - rho) * (lat - rho)
                                else:
                                    d = h * h
                                if d < best:
                                    best = d
                    dist[z, y, x] = sqrt(best)
