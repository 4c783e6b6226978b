"""Pure-Python grid ray-march, the fallback for the compiled kernel.

Walks the segment between two cell centers and visits exactly the cells whose
interior the segment crosses. All stepping decisions are exact integer
comparisons in doubled coordinates, so this implementation and the Cython one
produce bit-identical counts. A segment that passes exactly through a lattice
corner steps diagonally and does not count the two corner-adjacent cells.
"""

import numpy as np


def trace_obstruction_counts(static_mask, dynamic_mask, bs_row, bs_col):
    """Count obstacle cells crossed by the ray from the BS to every cell.

    The source cell is excluded, the target cell included. Returns two int32
    grids: static crossings and dynamic crossings per target cell.
    """
    static = np.ascontiguousarray(static_mask, dtype=np.uint8)
    dynamic = np.ascontiguousarray(dynamic_mask, dtype=np.uint8)
    n_rows, n_cols = static.shape
    out_s = np.zeros((n_rows, n_cols), dtype=np.int32)
    out_d = np.zeros((n_rows, n_cols), dtype=np.int32)

    for r1 in range(n_rows):
        for c1 in range(n_cols):
            ns = nd = 0
            r, c = bs_row, bs_col
            adx = 2 * abs(c1 - bs_col)
            ady = 2 * abs(r1 - bs_row)
            sx = 1 if c1 > bs_col else -1
            sy = 1 if r1 > bs_row else -1
            # i/j count vertical/horizontal boundary crossings so far; the
            # next crossing parameter along the ray is (1 + 2i)/adx vs
            # (1 + 2j)/ady, compared by cross-multiplication.
            i = j = 0
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
                if static[r, c]:
                    ns += 1
                if dynamic[r, c]:
                    nd += 1
            out_s[r1, c1] = ns
            out_d[r1, c1] = nd
    return out_s, out_d
