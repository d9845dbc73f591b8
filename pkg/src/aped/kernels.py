"""Hot dynamic-programming kernels with a numba fast path.

The alignment score fill and the edit-distance fill are the only pure-Python
inner loops that run once per corpus record, so they carry @njit. Setting
APED_PURE_NUMPY=1 (or not having numba installed) selects the plain-Python
fallback; both paths produce identical results, the flag only affects speed.
`benchmarks/kernel_bench.py` compares the two.
"""

from __future__ import annotations

import os

import numpy as np

# Traceback moves for the alignment fill.
DIAG = 0  # consume target + canonical (match or substitution)
UP = 1    # consume target only (deletion)
LEFT = 2  # consume canonical only (insertion)


def _nw_fill_impl(t_ids, c_ids, match, mismatch, gap):
    """Global-alignment DP over target rows x canonical columns.

    Returns (H, B): H[i, j] is the best score aligning target[:i] with
    canonical[:j]; B holds the traceback move chosen at each cell with the
    fixed tie-break preference DIAG > UP > LEFT.
    """
    k = t_ids.shape[0]
    n = c_ids.shape[0]
    H = np.zeros((k + 1, n + 1), dtype=np.float64)
    B = np.zeros((k + 1, n + 1), dtype=np.uint8)
    for i in range(1, k + 1):
        H[i, 0] = i * gap
        B[i, 0] = UP
    for j in range(1, n + 1):
        H[0, j] = j * gap
        B[0, j] = LEFT
    for i in range(1, k + 1):
        ti = t_ids[i - 1]
        for j in range(1, n + 1):
            sub = match if ti == c_ids[j - 1] else mismatch
            diag = H[i - 1, j - 1] + sub
            up = H[i - 1, j] + gap
            left = H[i, j - 1] + gap
            best = diag
            move = DIAG
            if up > best:
                best = up
                move = UP
            if left > best:
                best = left
                move = LEFT
            H[i, j] = best
            B[i, j] = move
    return H, B


def _levenshtein_impl(a_ids, b_ids):
    """Unit-cost edit distance (two-row DP)."""
    n = a_ids.shape[0]
    m = b_ids.shape[0]
    prev = np.arange(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        ai = a_ids[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ai == b_ids[j - 1] else 1
            d = prev[j - 1] + cost
            if prev[j] + 1 < d:
                d = prev[j] + 1
            if cur[j - 1] + 1 < d:
                d = cur[j - 1] + 1
            cur[j] = d
        prev, cur = cur, prev
    return prev[m]


nw_fill_python = _nw_fill_impl
levenshtein_python = _levenshtein_impl

BACKEND = "python"
if os.environ.get("APED_PURE_NUMPY", "") != "1":
    try:
        from numba import njit

        nw_fill = njit(cache=True)(_nw_fill_impl)
        levenshtein = njit(cache=True)(_levenshtein_impl)
        BACKEND = "numba"
    except ImportError:
        nw_fill = _nw_fill_impl
        levenshtein = _levenshtein_impl
else:
    nw_fill = _nw_fill_impl
    levenshtein = _levenshtein_impl


def backend() -> str:
    """Active kernel backend, 'numba' or 'python'."""
    return BACKEND
