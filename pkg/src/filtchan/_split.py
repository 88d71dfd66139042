"""Exhaustive split search over 256-bin quantized features.

Given a feature-major uint8 bin matrix (F, n), per-sample weights and +/-1
labels, find for every feature the best threshold bin and its impurity, then
pick the global winner. Two interchangeable backends compute the per-feature
scan: a numba kernel parallelised over features (default) and a chunked
numpy implementation (set FILTCHAN_NUMBA=0 to force it). Both accumulate
per feature in sample order, so results are identical and deterministic
regardless of thread count.

Split criteria:

* "misclass" (discrete Adaboost): weighted misclassification error of the
  two children treated as leaves, min(L+, L-) + min(R+, R-).
* "z" (Realboost): the Z measure 2*(sqrt(L+*L-) + sqrt(R+*R-)).

Thresholds t in [0, 254] send bin <= t to the left child. Ties are broken by
the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

import os

import numpy as np

N_BINS = 256

_USE_NUMBA = os.environ.get("FILTCHAN_NUMBA", "1") != "0"

if _USE_NUMBA:
    try:
        from numba import njit, prange
    except ImportError:  # pragma: no cover - numba is a hard dependency
        _USE_NUMBA = False

if not _USE_NUMBA:
    prange = range


def _scan_features_py(bins, idx, w, y_pos, use_z):
    n_feat = bins.shape[0]
    best_err = np.full(n_feat, np.inf, np.float64)
    best_thr = np.full(n_feat, -1, np.int64)
    for f in prange(n_feat):
        wp = np.zeros(N_BINS, np.float64)
        wn = np.zeros(N_BINS, np.float64)
        row = bins[f]
        for t in range(idx.shape[0]):
            i = idx[t]
            if y_pos[i]:
                wp[row[i]] += w[i]
            else:
                wn[row[i]] += w[i]
        totp = 0.0
        totn = 0.0
        for b in range(N_BINS):
            totp += wp[b]
            totn += wn[b]
        be = np.inf
        bt = -1
        cp = 0.0
        cn = 0.0
        for t in range(N_BINS - 1):
            cp += wp[t]
            cn += wn[t]
            rp = totp - cp
            rn = totn - cn
            if use_z:
                e = 2.0 * (np.sqrt(cp * cn) + np.sqrt(rp * rn))
            else:
                e = min(cp, cn) + min(rp, rn)
            if e < be:
                be = e
                bt = t
        best_err[f] = be
        best_thr[f] = bt
    return best_err, best_thr


if _USE_NUMBA:
    _scan_features_numba = njit(parallel=True, fastmath=False, cache=True)(_scan_features_py)


def _scan_features_numpy(bins, idx, w, y_pos, use_z, chunk=4096):
    n_feat = bins.shape[0]
    wp_s = np.where(y_pos[idx], w[idx], 0.0)
    wn_s = np.where(y_pos[idx], 0.0, w[idx])
    best_err = np.full(n_feat, np.inf, np.float64)
    best_thr = np.full(n_feat, -1, np.int64)
    for start in range(0, n_feat, chunk):
        stop = min(start + chunk, n_feat)
        rows = bins[start:stop][:, idx].astype(np.int64)
        rows += np.arange(stop - start, dtype=np.int64)[:, None] * N_BINS
        flat = rows.ravel()
        size = (stop - start) * N_BINS
        wp = np.bincount(flat, weights=np.broadcast_to(wp_s, rows.shape).ravel(),
                         minlength=size)[:size].reshape(stop - start, N_BINS)
        wn = np.bincount(flat, weights=np.broadcast_to(wn_s, rows.shape).ravel(),
                         minlength=size)[:size].reshape(stop - start, N_BINS)
        cp = np.cumsum(wp, axis=1)[:, :-1]
        cn = np.cumsum(wn, axis=1)[:, :-1]
        totp = cp[:, -1:] + wp[:, -1:]
        totn = cn[:, -1:] + wn[:, -1:]
        rp = totp - cp
        rn = totn - cn
        if use_z:
            err = 2.0 * (np.sqrt(cp * cn) + np.sqrt(rp * rn))
        else:
            err = np.minimum(cp, cn) + np.minimum(rp, rn)
        best_thr[start:stop] = np.argmin(err, axis=1)  # first min = lowest bin
        best_err[start:stop] = err[np.arange(stop - start), best_thr[start:stop]]
    return best_err, best_thr


def scan_features(bins: np.ndarray, idx: np.ndarray, w: np.ndarray,
                  y_pos: np.ndarray, use_z: bool) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature best (error, threshold bin) over the samples in ``idx``."""
    if _USE_NUMBA:
        return _scan_features_numba(bins, idx, w, y_pos, use_z)
    return _scan_features_numpy(bins, idx, w, y_pos, use_z)


def best_split(bins: np.ndarray, idx: np.ndarray, w: np.ndarray,
               y_pos: np.ndarray, use_z: bool) -> tuple[int, int, float]:
    """Globally best (feature, threshold bin, error); ties by lowest indices."""
    err, thr = scan_features(bins, idx, w, y_pos, use_z)
    f = int(np.argmin(err))  # argmin returns the first minimum
    return f, int(thr[f]), float(err[f])
