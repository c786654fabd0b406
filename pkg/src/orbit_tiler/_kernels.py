"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The backend is chosen by the ``ORBIT_TILER_BACKEND`` environment variable
(``numba`` or ``numpy``; default ``numba`` when it imports). Object arrays,
which carry exact ``Fraction`` values, always take the numpy path.

For float64 input both paths add terms in the same left-to-right order, so
their results agree bit for bit.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None

_REQUESTED = os.environ.get("ORBIT_TILER_BACKEND", "numba").strip().lower()
if _REQUESTED not in ("numba", "numpy"):
    raise ImportError(f"ORBIT_TILER_BACKEND must be 'numba' or 'numpy', got {_REQUESTED!r}")
BACKEND = _REQUESTED if njit is not None else "numpy"


def _use_numba(f: np.ndarray, backend: str | None) -> bool:
    backend = backend or BACKEND
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend == "numba" and njit is not None and f.dtype != object


# ---------------------------------------------------------------- tile lengths


def _tile_lengths_py(f, b, L, lo, hi):
    m = hi - lo
    if f.dtype == object:
        s = np.zeros(m, dtype=object)
    else:
        s = np.zeros(m, dtype=np.float64)
    best = np.zeros(m, dtype=np.int64)
    for n in range(1, L + 1):
        s = s + f[lo + n - 1 : hi + n - 1]
        best[np.asarray(s / n >= b, dtype=bool)] = n
    ell = np.zeros(f.shape[0], dtype=np.int64)
    fail = np.zeros(f.shape[0], dtype=bool)
    fail[lo:hi] = best == 0
    ell[lo:hi] = np.where(best == 0, 1, best)
    return ell, fail


if njit is not None:

    @njit(cache=True)
    def _tile_lengths_nb(f, b, L, lo, hi):
        ell = np.zeros(f.shape[0], np.int64)
        fail = np.zeros(f.shape[0], np.bool_)
        for i in range(lo, hi):
            s = 0.0
            best = 0
            for n in range(1, L + 1):
                s += f[i + n - 1]
                if s / n >= b:
                    best = n
            if best == 0:
                ell[i] = 1
                fail[i] = True
            else:
                ell[i] = best
        return ell, fail


def tile_lengths(f, b, L, lo, hi, backend=None):
    """Largest n <= L with mean(f[i:i+n]) >= b, for every i in [lo, hi).

    Returns ``(ell, fail)`` of length ``len(f)``; ``fail[i]`` marks indices
    where no such n exists (there ``ell[i] = 1``). Outside [lo, hi) ``ell``
    is 0. Requires ``hi - 1 + L <= len(f)``.
    """
    if hi - 1 + L > f.shape[0]:
        raise ValueError("tile horizon runs past the end of the values")
    if _use_numba(f, backend):
        return _tile_lengths_nb(np.ascontiguousarray(f, dtype=np.float64), float(b), int(L), int(lo), int(hi))
    return _tile_lengths_py(f, b, int(L), int(lo), int(hi))


# ------------------------------------------------------- threshold reach scan


def _extend_reach_py(f, b, idx, sums, n_from, n_to):
    sums = sums.copy()
    hit = np.zeros(idx.shape[0], dtype=bool)
    live = np.arange(idx.shape[0])
    for n in range(n_from, n_to + 1):
        if live.size == 0:
            break
        sums[live] = sums[live] + f[idx[live] + n - 1]
        ok = np.asarray(sums[live] / n >= b, dtype=bool)
        hit[live[ok]] = True
        live = live[~ok]
    return hit, sums


if njit is not None:

    @njit(cache=True)
    def _extend_reach_nb(f, b, idx, sums, n_from, n_to):
        sums = sums.copy()
        hit = np.zeros(idx.shape[0], np.bool_)
        for k in range(idx.shape[0]):
            i = idx[k]
            s = sums[k]
            for n in range(n_from, n_to + 1):
                s += f[i + n - 1]
                if s / n >= b:
                    hit[k] = True
                    break
            sums[k] = s
        return hit, sums


def extend_reach(f, b, idx, sums, n_from, n_to, backend=None):
    """Continue the running sums of ``f`` from each start in ``idx``.

    ``sums[k]`` holds ``sum(f[idx[k] : idx[k] + n_from - 1])``. For each
    start the scan tries n = n_from..n_to and stops at the first n with
    mean >= b. Returns ``(hit, new_sums)``; for starts that did not hit,
    ``new_sums`` covers n_to terms. Entries that hit carry a partial sum and
    must be dropped by the caller.
    """
    if idx.size and int(idx.max()) + n_to > f.shape[0]:
        raise ValueError("scan horizon runs past the end of the values")
    if _use_numba(f, backend):
        return _extend_reach_nb(
            np.ascontiguousarray(f, dtype=np.float64),
            float(b),
            np.ascontiguousarray(idx, dtype=np.int64),
            np.ascontiguousarray(sums, dtype=np.float64),
            int(n_from),
            int(n_to),
        )
    return _extend_reach_py(f, b, idx, sums, int(n_from), int(n_to))


# ----------------------------------------------------------------- block walk


def _block_walk_py(ell, markers, in_stilde):
    lo_out = []
    hi_out = []
    for k in range(markers.shape[0] - 1):
        pos = int(markers[k])
        end = int(markers[k + 1])
        while pos < end:
            step = int(ell[pos])
            if not in_stilde[pos]:
                lo_out.append(pos)
                hi_out.append(pos + step)
            pos += step
    return np.array(lo_out, dtype=np.int64), np.array(hi_out, dtype=np.int64)


if njit is not None:

    @njit(cache=True)
    def _block_walk_nb(ell, markers, in_stilde):
        n_out = 0
        lo_out = np.empty(ell.shape[0], np.int64)
        hi_out = np.empty(ell.shape[0], np.int64)
        for k in range(markers.shape[0] - 1):
            pos = markers[k]
            end = markers[k + 1]
            while pos < end:
                step = ell[pos]
                if not in_stilde[pos]:
                    lo_out[n_out] = pos
                    hi_out[n_out] = pos + step
                    n_out += 1
                pos += step
        return lo_out[:n_out].copy(), hi_out[:n_out].copy()


def block_walk(ell, markers, in_stilde, backend=None):
    """Greedy tile walk from each marker up to the next one.

    Every position the walk lands on is a z with [marker, z) tiled. Those
    outside ``in_stilde`` are returned as classes ``[z, z + ell[z])``.
    The last marker only closes the previous block.
    """
    if markers.size > 1 and np.any(ell[markers[0] : markers[-1]] < 1):
        raise ValueError("tile lengths must be positive along the walk")
    if _use_numba(ell, backend):
        return _block_walk_nb(
            np.ascontiguousarray(ell, dtype=np.int64),
            np.ascontiguousarray(markers, dtype=np.int64),
            np.ascontiguousarray(in_stilde, dtype=np.bool_),
        )
    return _block_walk_py(ell, markers, in_stilde)


# -------------------------------------------------------------- segment means


def _segment_means_py(f, lo, hi):
    length = hi - lo
    top = int(length.max()) if length.size else 0
    if f.dtype == object:
        s = np.zeros(lo.shape[0], dtype=object)
    else:
        s = np.zeros(lo.shape[0], dtype=np.float64)
    for k in range(top):
        live = length > k
        s[live] = s[live] + f[lo[live] + k]
    return s / length


if njit is not None:

    @njit(cache=True)
    def _segment_means_nb(f, lo, hi):
        out = np.empty(lo.shape[0], np.float64)
        for k in range(lo.shape[0]):
            s = 0.0
            for i in range(lo[k], hi[k]):
                s += f[i]
            out[k] = s / (hi[k] - lo[k])
        return out


def segment_means(f, lo, hi, backend=None):
    """Mean of f over each [lo[k], hi[k]), summed left to right."""
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    if np.any(hi <= lo):
        raise ValueError("segments must be nonempty")
    if _use_numba(f, backend):
        return _segment_means_nb(np.ascontiguousarray(f, dtype=np.float64), lo, hi)
    return _segment_means_py(f, lo, hi)
