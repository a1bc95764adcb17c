"""Reconstruction scoring: PSNR, optimal pairing and per-attack reports."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["psnr", "linear_sum_assignment", "pair_and_score", "PairingReport", "PSNR_CAP"]

PSNR_CAP = 100.0


def psnr(a, b, peak=1.0, cap=PSNR_CAP):
    """Peak signal-to-noise ratio in dB; identical inputs return ``cap``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(peak * peak / mse))


def linear_sum_assignment(cost):
    """Minimum-cost perfect matching of a square matrix (Hungarian method, O(n^3)).

    Returns ``(perm, total)`` where row ``i`` is assigned column ``perm[i]``.
    Uses row/column potentials with shortest augmenting paths.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)   # match[j]: row (1-based) owning column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[match[j] - 1] = j - 1
    return perm, float(cost[np.arange(n), perm].sum())


@dataclass
class PairingReport:
    permutation: np.ndarray      # reconstructed index -> original index
    psnrs: np.ndarray            # per reconstructed image
    mean_psnr: float
    final_lsim: float | None = None


def pair_and_score(reconstructed, original, peak=1.0, final_lsim=None):
    """Pair reconstructions with originals to maximise total PSNR, then score."""
    rec = np.asarray(reconstructed, dtype=np.float64)
    org = np.asarray(original, dtype=np.float64)
    if rec.shape != org.shape:
        raise ValueError(f"batch mismatch: {rec.shape} vs {org.shape}")
    n = rec.shape[0]
    table = np.array([[psnr(r, o, peak) for o in org] for r in rec]).reshape(n, n)
    perm, _ = linear_sum_assignment(-table)
    scores = table[np.arange(n), perm]
    return PairingReport(perm, scores, float(np.mean(scores)), final_lsim)
