# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fixed-radius nearest-neighbour kernel.

Same contract as ``_radius_py.nearest_within``; grid preparation (cell keys,
sort order) is done in numpy by the caller so both backends agree bit for bit.
"""
import numpy as np

from libc.math cimport INFINITY
from libc.stdint cimport int64_t

cdef enum:
    BITS = 21
    OFFSET = 1048576  # 1 << (BITS - 1)


cdef inline Py_ssize_t _lower(const int64_t[::1] a, int64_t x) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline Py_ssize_t _upper(const int64_t[::1] a, int64_t x) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def nearest_within_grid(const double[:, ::1] query,
                        const int64_t[:, ::1] qcells,
                        const double[:, ::1] ref,
                        const int64_t[::1] sorted_keys,
                        const int64_t[::1] order,
                        double radius):
    cdef Py_ssize_t nq = query.shape[0]
    out = np.full(nq, -1, dtype=np.int64)
    cdef int64_t[::1] out_v = out
    cdef Py_ssize_t i, k, lo, hi, r
    cdef int dx, dy, dz
    cdef int64_t key, cx, cy, cz, best_r
    cdef double ddx, ddy, ddz, d2, best
    cdef double r2 = radius * radius

    with nogil:
        for i in range(nq):
            best = INFINITY
            best_r = -1
            for dx in range(-1, 2):
                cx = qcells[i, 0] + dx + OFFSET
                for dy in range(-1, 2):
                    cy = qcells[i, 1] + dy + OFFSET
                    for dz in range(-1, 2):
                        cz = qcells[i, 2] + dz + OFFSET
                        key = (cx << (2 * BITS)) | (cy << BITS) | cz
                        lo = _lower(sorted_keys, key)
                        hi = _upper(sorted_keys, key)
                        for k in range(lo, hi):
                            r = order[k]
                            ddx = query[i, 0] - ref[r, 0]
                            ddy = query[i, 1] - ref[r, 1]
                            ddz = query[i, 2] - ref[r, 2]
                            d2 = ddx * ddx + ddy * ddy + ddz * ddz
                            if d2 < best or (d2 == best and r < best_r):
                                best = d2
                                best_r = r
            if best < r2:
                out_v[i] = best_r
    return out
