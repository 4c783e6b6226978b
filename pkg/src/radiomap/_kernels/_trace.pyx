# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled grid ray-march kernel.

Mirrors radiomap._kernels._trace_py step for step: exact integer stepping in
doubled coordinates, diagonal step on exact corner hits, source cell excluded,
target cell included. Both implementations must return bit-identical counts.
"""

import numpy as np


def trace_obstruction_counts(static_mask, dynamic_mask, int bs_row, int bs_col):
    static = np.ascontiguousarray(static_mask, dtype=np.uint8)
    dynamic = np.ascontiguousarray(dynamic_mask, dtype=np.uint8)
    cdef const unsigned char[:, ::1] s = static
    cdef const unsigned char[:, ::1] d = dynamic
    cdef Py_ssize_t n_rows = s.shape[0]
    cdef Py_ssize_t n_cols = s.shape[1]
    out_s = np.zeros((n_rows, n_cols), dtype=np.int32)
    out_d = np.zeros((n_rows, n_cols), dtype=np.int32)
    cdef int[:, ::1] os = out_s
    cdef int[:, ::1] od = out_d

    cdef Py_ssize_t r1, c1
    cdef long long r, c, adx, ady, sx, sy, i, j, tx, ty
    cdef int ns, nd

    for r1 in range(n_rows):
        for c1 in range(n_cols):
            ns = 0
            nd = 0
            r = bs_row
            c = bs_col
            adx = 2 * (c1 - bs_col if c1 >= bs_col else bs_col - c1)
            ady = 2 * (r1 - bs_row if r1 >= bs_row else bs_row - r1)
            sx = 1 if c1 > bs_col else -1
            sy = 1 if r1 > bs_row else -1
            i = 0
            j = 0
            while r != r1 or c != c1:
                tx = (1 + 2 * i) * ady
                ty = (1 + 2 * j) * adx
                if ady == 0 or (adx != 0 and tx < ty):
                    c += sx
                    i += 1
                elif adx == 0 or tx > ty:
                    r += sy
                    j += 1
                else:
                    r += sy
                    c += sx
                    i += 1
                    j += 1
                if s[r, c]:
                    ns += 1
                if d[r, c]:
                    nd += 1
            os[r1, c1] = ns
            od[r1, c1] = nd
    return out_s, out_d
