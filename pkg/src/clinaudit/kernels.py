"""Hot numeric kernels.

Each public function dispatches to a numba-compiled loop or to a pure-numpy
twin (see :mod:`clinaudit._accel`).  Both paths return identical values; the
numpy path exists for environments without a working numba and as a
cross-check in the test suite.

Set representation used throughout: a CSR pair ``(indptr, values)`` where
``values[indptr[i]:indptr[i + 1]]`` is the sorted, duplicate-free ``uint64``
shingle-hash set of document ``i``.
"""
from __future__ import annotations

import numpy as np

from ._accel import HAVE_NUMBA, njit

FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)
_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
EMPTY_SIGNATURE = np.iinfo(np.uint64).max


# --------------------------------------------------------------------------
# shingle hashing (FNV-1a over unicode code points)


@njit(cache=True)
def _window_hashes_nb(codepoints, n):
    m = codepoints.shape[0] - n + 1
    out = np.empty(m, dtype=np.uint64)
    for i in range(m):
        h = FNV_OFFSET
        for j in range(n):
            h = (h ^ np.uint64(codepoints[i + j])) * FNV_PRIME
        out[i] = h
    return out


def _window_hashes_np(codepoints, n):
    m = codepoints.shape[0] - n + 1
    h = np.full(m, FNV_OFFSET, dtype=np.uint64)
    cp = codepoints.astype(np.uint64)
    with np.errstate(over="ignore"):
        for j in range(n):
            h = (h ^ cp[j : j + m]) * FNV_PRIME
    return h


def window_hashes(codepoints: np.ndarray, n: int) -> np.ndarray:
    """FNV-1a hash of every length-``n`` window; one short window if len < n."""
    codepoints = np.ascontiguousarray(codepoints, dtype=np.uint32)
    if codepoints.shape[0] == 0:
        return np.empty(0, dtype=np.uint64)
    n = min(n, codepoints.shape[0])
    if HAVE_NUMBA:
        return _window_hashes_nb(codepoints, n)
    return _window_hashes_np(codepoints, n)


# --------------------------------------------------------------------------
# exact Jaccard over sorted sets


@njit(cache=True)
def _jaccard_sorted(a, b):
    na = a.shape[0]
    nb = b.shape[0]
    if na == 0 and nb == 0:
        return 1.0
    i = 0
    j = 0
    inter = 0
    while i < na and j < nb:
        if a[i] == b[j]:
            inter += 1
            i += 1
            j += 1
        elif a[i] < b[j]:
            i += 1
        else:
            j += 1
    return inter / (na + nb - inter)


@njit(cache=True)
def _max_jaccard_nb(q_ptr, q_val, r_ptr, order_vals, order_docs):
    nq = q_ptr.shape[0] - 1
    nr = r_ptr.shape[0] - 1
    best = np.zeros(nq, dtype=np.float64)
    arg = np.full(nq, -1, dtype=np.int64)
    inter = np.zeros(nr, dtype=np.int64)
    for i in range(nq):
        a = q_val[q_ptr[i] : q_ptr[i + 1]]
        na = a.shape[0]
        for p in range(na):
            lo = np.searchsorted(order_vals, a[p], side="left")
            hi = np.searchsorted(order_vals, a[p], side="right")
            for t in range(lo, hi):
                inter[order_docs[t]] += 1
        for k in range(nr):
            nb = r_ptr[k + 1] - r_ptr[k]
            c = inter[k]
            inter[k] = 0
            if na == 0 and nb == 0:
                s = 1.0
            else:
                s = c / (na + nb - c)
            if s > best[i] or arg[i] < 0:
                best[i] = s
                arg[i] = k
    return best, arg


def _max_jaccard_np(q_ptr, q_val, r_ptr, order_vals, order_docs):
    nq = q_ptr.shape[0] - 1
    nr = r_ptr.shape[0] - 1
    r_sizes = np.diff(r_ptr)
    best = np.zeros(nq, dtype=np.float64)
    arg = np.full(nq, -1, dtype=np.int64)
    if nr == 0:
        return best, arg
    for i in range(nq):
        a = q_val[q_ptr[i] : q_ptr[i + 1]]
        lo = np.searchsorted(order_vals, a, side="left")
        hi = np.searchsorted(order_vals, a, side="right")
        lens = hi - lo
        if lens.sum():
            starts = np.repeat(lo - np.concatenate(([0], np.cumsum(lens)[:-1])), lens)
            pos = starts + np.arange(lens.sum())
            inter = np.bincount(order_docs[pos], minlength=nr)
        else:
            inter = np.zeros(nr, dtype=np.int64)
        union = a.shape[0] + r_sizes - inter
        sims = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
        k = int(np.argmax(sims))
        best[i] = sims[k]
        arg[i] = k
    return best, arg


def _inverted(r_ptr, r_val):
    docs = np.repeat(np.arange(r_ptr.shape[0] - 1, dtype=np.int64), np.diff(r_ptr))
    order = np.argsort(r_val, kind="stable")
    return np.ascontiguousarray(r_val[order]), np.ascontiguousarray(docs[order])


def max_jaccard(q_ptr, q_val, r_ptr, r_val):
    """For each query set, the best exact Jaccard against all reference sets.

    Intersections are counted through an inverted index (reference hashes
    sorted once), so cost scales with shared shingles rather than set sizes.

    Returns ``(best, argbest)``; ties go to the lowest reference index, so
    callers order references by the desired tie-break key.  ``argbest`` is
    -1 when there are no references.
    """
    r_ptr = np.ascontiguousarray(r_ptr, dtype=np.int64)
    vals, docs = _inverted(r_ptr, np.ascontiguousarray(r_val, dtype=np.uint64))
    args = (
        np.ascontiguousarray(q_ptr, dtype=np.int64),
        np.ascontiguousarray(q_val, dtype=np.uint64),
        r_ptr,
        vals,
        docs,
    )
    if HAVE_NUMBA:
        return _max_jaccard_nb(*args)
    return _max_jaccard_np(*args)


@njit(cache=True)
def _pair_jaccard_nb(a_ptr, a_val, b_ptr, b_val, ia, ib):
    out = np.empty(ia.shape[0], dtype=np.float64)
    for p in range(ia.shape[0]):
        i = ia[p]
        k = ib[p]
        out[p] = _jaccard_sorted(a_val[a_ptr[i] : a_ptr[i + 1]], b_val[b_ptr[k] : b_ptr[k + 1]])
    return out


def _pair_jaccard_np(a_ptr, a_val, b_ptr, b_val, ia, ib):
    out = np.empty(ia.shape[0], dtype=np.float64)
    for p in range(ia.shape[0]):
        a = a_val[a_ptr[ia[p]] : a_ptr[ia[p] + 1]]
        b = b_val[b_ptr[ib[p]] : b_ptr[ib[p] + 1]]
        if a.shape[0] == 0 and b.shape[0] == 0:
            out[p] = 1.0
            continue
        inter = np.intersect1d(a, b, assume_unique=True).shape[0]
        out[p] = inter / (a.shape[0] + b.shape[0] - inter)
    return out


def pair_jaccard(a_ptr, a_val, b_ptr, b_val, ia, ib) -> np.ndarray:
    """Exact Jaccard for explicit (a-doc, b-doc) index pairs."""
    args = (
        np.ascontiguousarray(a_ptr, dtype=np.int64),
        np.ascontiguousarray(a_val, dtype=np.uint64),
        np.ascontiguousarray(b_ptr, dtype=np.int64),
        np.ascontiguousarray(b_val, dtype=np.uint64),
        np.ascontiguousarray(ia, dtype=np.int64),
        np.ascontiguousarray(ib, dtype=np.int64),
    )
    if HAVE_NUMBA:
        return _pair_jaccard_nb(*args)
    return _pair_jaccard_np(*args)


# --------------------------------------------------------------------------
# MinHash signatures: h_s(x) = splitmix64(x ^ s), minimum over the set


@njit(cache=True)
def _splitmix(z):
    z = z + _SM_GAMMA
    z = (z ^ (z >> _S30)) * _SM_M1
    z = (z ^ (z >> _S27)) * _SM_M2
    return z ^ (z >> _S31)


@njit(cache=True)
def _signatures_nb(ptr, val, seeds):
    n = ptr.shape[0] - 1
    k = seeds.shape[0]
    out = np.empty((n, k), dtype=np.uint64)
    for d in range(n):
        for s in range(k):
            m = np.uint64(0xFFFFFFFFFFFFFFFF)
            for p in range(ptr[d], ptr[d + 1]):
                h = _splitmix(val[p] ^ seeds[s])
                if h < m:
                    m = h
            out[d, s] = m
    return out


def _splitmix_np(z):
    with np.errstate(over="ignore"):
        z = z + _SM_GAMMA
        z = (z ^ (z >> _S30)) * _SM_M1
        z = (z ^ (z >> _S27)) * _SM_M2
    return z ^ (z >> _S31)


def _signatures_np(ptr, val, seeds):
    n = ptr.shape[0] - 1
    out = np.full((n, seeds.shape[0]), EMPTY_SIGNATURE, dtype=np.uint64)
    for d in range(n):
        x = val[ptr[d] : ptr[d + 1]]
        if x.shape[0]:
            out[d] = _splitmix_np(x[:, None] ^ seeds[None, :]).min(axis=0)
    return out


def minhash_signatures(ptr, val, seeds) -> np.ndarray:
    """``(n_docs, k)`` signature matrix; empty sets get all-ones rows."""
    args = (
        np.ascontiguousarray(ptr, dtype=np.int64),
        np.ascontiguousarray(val, dtype=np.uint64),
        np.ascontiguousarray(seeds, dtype=np.uint64),
    )
    if HAVE_NUMBA:
        return _signatures_nb(*args)
    return _signatures_np(*args)


# --------------------------------------------------------------------------
# bootstrap replicates of agreement statistics


@njit(cache=True)
def _cohen_from_codes(a, b, n_cat):
    n = a.shape[0]
    ca = np.zeros(n_cat, dtype=np.int64)
    cb = np.zeros(n_cat, dtype=np.int64)
    agree = 0
    for i in range(n):
        ca[a[i]] += 1
        cb[b[i]] += 1
        if a[i] == b[i]:
            agree += 1
    pe_num = 0
    for c in range(n_cat):
        pe_num += ca[c] * cb[c]
    nn = n * n
    if pe_num == nn:
        return 1.0
    # (p_o - p_e) / (1 - p_e) with integer numerators
    return (agree * n - pe_num) / (nn - pe_num)


@njit(cache=True)
def _bootstrap_cohen_nb(a, b, n_cat, idx):
    B = idx.shape[0]
    out = np.empty(B, dtype=np.float64)
    for r in range(B):
        out[r] = _cohen_from_codes(a[idx[r]], b[idx[r]], n_cat)
    return out


def _cohen_from_codes_np(a, b, n_cat):
    n = a.shape[0]
    ca = np.bincount(a, minlength=n_cat).astype(np.int64)
    cb = np.bincount(b, minlength=n_cat).astype(np.int64)
    agree = int(np.count_nonzero(a == b))
    pe_num = int(ca @ cb)
    nn = n * n
    if pe_num == nn:
        return 1.0
    return (agree * n - pe_num) / (nn - pe_num)


def _bootstrap_cohen_np(a, b, n_cat, idx):
    return np.array([_cohen_from_codes_np(a[r], b[r], n_cat) for r in idx], dtype=np.float64)


def bootstrap_cohen(a_codes, b_codes, n_cat: int, idx: np.ndarray) -> np.ndarray:
    """Cohen's kappa for each row of the resampling index matrix ``idx``."""
    a = np.ascontiguousarray(a_codes, dtype=np.int64)
    b = np.ascontiguousarray(b_codes, dtype=np.int64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if HAVE_NUMBA:
        return _bootstrap_cohen_nb(a, b, n_cat, idx)
    return _bootstrap_cohen_np(a, b, n_cat, idx)


@njit(cache=True)
def _fleiss_from_counts(counts):
    N = counts.shape[0]
    C = counts.shape[1]
    n = 0
    for c in range(C):
        n += counts[0, c]
    col = np.zeros(C, dtype=np.int64)
    sq = 0
    for i in range(N):
        for c in range(C):
            v = counts[i, c]
            sq += v * v
            col[c] += v
    p_bar = (sq - N * n) / (N * n * (n - 1))
    tot = N * n
    pe_num = 0
    for c in range(C):
        pe_num += col[c] * col[c]
    if pe_num == tot * tot:
        return 1.0
    p_e = pe_num / (tot * tot)
    return (p_bar - p_e) / (1.0 - p_e)


@njit(cache=True)
def _bootstrap_fleiss_nb(counts, idx):
    B = idx.shape[0]
    out = np.empty(B, dtype=np.float64)
    for r in range(B):
        out[r] = _fleiss_from_counts(counts[idx[r]])
    return out


def _fleiss_from_counts_np(counts):
    N, _ = counts.shape
    n = int(counts[0].sum())
    col = counts.sum(axis=0)
    p_bar = (int((counts * counts).sum()) - N * n) / (N * n * (n - 1))
    tot = N * n
    pe_num = int(col @ col)
    if pe_num == tot * tot:
        return 1.0
    p_e = pe_num / (tot * tot)
    return (p_bar - p_e) / (1.0 - p_e)


def _bootstrap_fleiss_np(counts, idx):
    return np.array([_fleiss_from_counts_np(counts[r]) for r in idx], dtype=np.float64)


def bootstrap_fleiss(counts: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Fleiss' kappa for each row of the resampling index matrix ``idx``."""
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if HAVE_NUMBA:
        return _bootstrap_fleiss_nb(counts, idx)
    return _bootstrap_fleiss_np(counts, idx)
