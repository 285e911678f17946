"""Numba kernels for the exhaustive similarity scan and weighted combination.

Memory rows are stored as float32; every accumulation runs in float64. The
fastmath set below permits FMA contraction and a compile-time-fixed
reassociation of the reduction tree, which is what makes the loops vectorize.
The summation order is baked into the compiled kernel, so results are bitwise
reproducible across calls and across thread counts (parallelism is only ever
across rows or across the fixed chunk grid, never inside one reduction).
"""

from __future__ import annotations

import warnings

import numpy as np
from numba import NumbaWarning, njit, prange

# Stale-TBB hosts fall back to another threading layer; the warning fires at
# first parallel execution and is pure noise for users of this package.
warnings.filterwarnings("ignore", message=".*TBB.*", category=NumbaWarning)

# Fixed chunk grid for parallel reductions. Must never depend on the active
# thread count, otherwise partial sums would move between chunks.
N_CHUNKS = 64

# 'nnan'/'ninf' stay off: -inf sentinels and NaN propagation must keep IEEE
# semantics inside the online-softmax rescale.
_FM = {"contract", "reassoc"}


@njit(parallel=True, fastmath=_FM, cache=True)
def similarity_scan(mem, query, out):
    """out[i] = dot(mem[i], query), float64 accumulation over float32 rows."""
    n, d = mem.shape
    for i in prange(n):
        acc = 0.0
        for j in range(d):
            acc += mem[i, j] * query[j]
        out[i] = acc


@njit(parallel=True, fastmath=_FM, cache=True)
def weighted_combine(mem, weights, partials):
    """partials[c] = sum of weights[i] * mem[i] over the rows of chunk c."""
    n, d = mem.shape
    n_chunks = partials.shape[0]
    chunk = (n + n_chunks - 1) // n_chunks
    for c in prange(n_chunks):
        lo = c * chunk
        hi = min(n, lo + chunk)
        acc = np.zeros(d)
        for i in range(lo, hi):
            wi = weights[i]
            for j in range(d):
                acc[j] += wi * mem[i, j]
        partials[c, :] = acc


@njit(parallel=True, fastmath=_FM, cache=True)
def fused_scan(mem, query, inv_tau, sims, chunk_max, partials):
    """Single streaming pass: similarities plus online-softmax combination.

    Each chunk keeps a running maximum m_c of z_i = sims[i] * inv_tau and a
    combination accumulated at scale exp(z_i - m_c); when a new maximum
    arrives, the accumulator is rescaled by exp(old - new). The caller folds
    the chunks together with the global maximum.
    """
    n, d = mem.shape
    n_chunks = partials.shape[0]
    chunk = (n + n_chunks - 1) // n_chunks
    for c in prange(n_chunks):
        lo = c * chunk
        hi = min(n, lo + chunk)
        m_c = -np.inf
        acc = np.zeros(d)
        for i in range(lo, hi):
            s = 0.0
            for j in range(d):
                s += mem[i, j] * query[j]
            sims[i] = s
            z = s * inv_tau
            if z > m_c:
                f = np.exp(m_c - z)  # exp(-inf) = 0 clears the first iteration
                for j in range(d):
                    acc[j] *= f
                m_c = z
            e = np.exp(z - m_c)
            for j in range(d):
                acc[j] += e * mem[i, j]
        chunk_max[c] = m_c
        partials[c, :] = acc


def stable_projection_pass(
    mem: np.ndarray, query: np.ndarray, temperature: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the fused scan and assemble (similarities, weights, raw combination)."""
    n, d = mem.shape
    inv_tau = 1.0 / temperature
    sims = np.empty(n, dtype=np.float64)
    chunk_max = np.empty(N_CHUNKS, dtype=np.float64)
    partials = np.empty((N_CHUNKS, d), dtype=np.float64)
    fused_scan(mem, query, inv_tau, sims, chunk_max, partials)

    # Same z = sims * inv_tau expression as inside the kernel, so the global
    # maximum agrees bitwise with max(chunk_max).
    z = sims * inv_tau
    z_max = z.max()
    exps = np.exp(z - z_max)
    total = exps.sum()
    weights = exps / total
    scale = np.exp(chunk_max - z_max)  # empty chunks carry -inf -> 0
    raw = (partials * scale[:, None]).sum(axis=0) / total
    return sims, weights, raw


def combine(mem: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Deterministic raw combination sum(weights[i] * mem[i]) in float64."""
    partials = np.empty((N_CHUNKS, mem.shape[1]), dtype=np.float64)
    weighted_combine(mem, weights, partials)
    return partials.sum(axis=0)


def warmup(dim: int = 8) -> None:
    """Force-compile the kernels on a tiny input (no-op once cached)."""
    mem = np.zeros((2, dim), dtype=np.float32)
    mem[:, 0] = 1.0
    q = np.zeros(dim, dtype=np.float64)
    q[0] = 1.0
    out = np.empty(2, dtype=np.float64)
    similarity_scan(mem, q, out)
    combine(mem, np.array([0.5, 0.5]))
    stable_projection_pass(mem, q, 1.0)
