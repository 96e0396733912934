# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled world checker: which worlds satisfy a DNF lineage."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, uint8_t

cnp.import_array()


def eval_worlds(const uint64_t[:, :] worlds, const uint64_t[:, :] pos, const uint64_t[:, :] neg):
    """Return a uint8 array: 1 where some clause has all positive bits set and no negative bit."""
    cdef Py_ssize_t n = worlds.shape[0], w = worlds.shape[1], c = pos.shape[0]
    cdef Py_ssize_t i, j, k
    cdef bint ok
    out_arr = np.zeros(n, dtype=np.uint8)
    cdef uint8_t[:] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(c):
                ok = True
                for k in range(w):
                    if (worlds[i, k] & pos[j, k]) != pos[j, k] or (worlds[i, k] & neg[j, k]) != 0:
                        ok = False
                        break
                if ok:
                    out[i] = 1
                    break
    return out_arr


def all_worlds(int m):
    """Every world over ``m`` tuples as a single-word bitmask column."""
    cdef Py_ssize_t n = (<Py_ssize_t>1) << m, i
    out_arr = np.empty((n, 1), dtype=np.uint64)
    cdef uint64_t[:, :] out = out_arr
    for i in range(n):
        out[i, 0] = i
    return out_arr
