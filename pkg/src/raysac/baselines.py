"""Heuristic depth samplers: uniform midpoints, stratified draws, and
NeRF-style hierarchical inverse-CDF importance resampling."""

from __future__ import annotations

import numpy as np

SAMPLER_KINDS = ("uniform", "stratified", "hierarchical", "policy")


def uniform_samples(t_n, t_f, N):
    """Midpoints of N equal bins."""
    if N < 1:
        raise ValueError("N must be >= 1")
    h = (t_f - t_n) / N
    return t_n + (np.arange(N, dtype=np.float64) + 0.5) * h


def stratified_samples(t_n, t_f, N, rng):
    """One uniform draw per equal bin; ascending by construction."""
    if N < 1:
        raise ValueError("N must be >= 1")
    h = (t_f - t_n) / N
    u = rng.uniform(size=N)
    return t_n + (np.arange(N, dtype=np.float64) + u) * h


def _coarse_bin_edges(coarse_depths):
    """Edges at midpoints between adjacent depths, end bins mirrored so that
    uniform-midpoint depths reproduce their equal bins exactly."""
    t = np.asarray(coarse_depths, dtype=np.float64)
    mid = 0.5 * (t[:-1] + t[1:])
    first = t[0] - (t[1] - t[0]) / 2.0
    last = t[-1] + (t[-1] - t[-2]) / 2.0
    return np.concatenate([[first], mid, [last]])


def hierarchical_resample(coarse_depths, coarse_weights, N_f, rng):
    """Inverse-CDF draws from the piecewise-constant distribution proportional
    to coarse weights over coarse bins, merged with the coarse depths and
    sorted.  All-zero weights fall back to stratified over the coarse range.
    """
    t = np.asarray(coarse_depths, dtype=np.float64)
    w = np.asarray(coarse_weights, dtype=np.float64)
    if t.shape != w.shape or t.ndim != 1 or t.size < 2:
        raise ValueError("need matching 1-d coarse depths/weights, at least 2 samples")
    if np.any(w < 0):
        raise ValueError("coarse weights must be non-negative")
    edges = _coarse_bin_edges(t)
    total = w.sum()
    if total <= 0:
        fine = stratified_samples(edges[0], edges[-1], N_f, rng)
    else:
        pdf = w / total
        cdf = np.concatenate([[0.0], np.cumsum(pdf)])
        cdf[-1] = 1.0
        # stratified u keeps the draws spread across the CDF
        u = (np.arange(N_f, dtype=np.float64) + rng.uniform(size=N_f)) / N_f
        idx = np.searchsorted(cdf, u, side="right") - 1
        idx = np.clip(idx, 0, len(pdf) - 1)
        denom = np.where(pdf[idx] > 0, pdf[idx], 1.0)
        frac = (u - cdf[idx]) / denom
        fine = edges[idx] + frac * (edges[idx + 1] - edges[idx])
    return np.sort(np.concatenate([t, fine]))
