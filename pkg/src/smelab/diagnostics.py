"""Instruments for studying why a surrogate model works.

Most functions come in two flavours: a model/dataset convenience wrapper and a
plain version that takes a gradient callable ``grad_fn(w) -> ndarray``, so the
same code runs on toy quadratics and on networks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .attacks import DegenerateUpdateError
from .data import write_csv
from .models import grad_weights, interpolate

__all__ = [
    "cosine", "delta_error", "delta_error_from", "SubspaceProjector", "fit_top2_subspace",
    "projection_ratio_series", "estimate_g2", "alpha_sweep", "alpha_sweep_fn",
    "best_alpha", "table1_stats", "TABLE1_COLUMNS", "BoundInputs", "BoundPreconditionError",
    "BoundOverflowError", "eval_bound_gd", "eval_bound_sgd", "gd_path", "estimate_smoothness",
    "flow2d_check", "flow_endpoint", "FlowError", "write_series",
]


def cosine(u, v):
    u = np.ravel(u)
    v = np.ravel(v)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DegenerateUpdateError("cosine similarity of a zero vector")
    return float(u @ v / (nu * nv))


def delta_error_from(reversed_update, grad_w0):
    """Cosine loss between ``w0 - wT`` and the true gradient at ``w0``."""
    return 1.0 - cosine(reversed_update, grad_w0)


def delta_error(spec, update, dataset):
    """Intrinsic objective error of plain inversion for this update and its true data."""
    if update.is_degenerate():
        raise DegenerateUpdateError("w0 == wT")
    g0 = grad_weights(spec, update.w0, dataset.inputs, dataset.labels).values
    return delta_error_from(update.reversed_update, g0)


# ---------------------------------------------------------------- low-rank subspace

@dataclass(frozen=True)
class SubspaceProjector:
    """Orthogonal projection onto the span of two orthonormal rows of ``basis``."""

    basis: np.ndarray     # (2, p)

    def coords(self, v):
        return self.basis @ np.ravel(v)

    def project(self, v):
        return self.coords(v) @ self.basis

    def complement(self, v):
        return np.ravel(v) - self.project(v)

    def ratio(self, v):
        """``|P2 v| / |v|``."""
        return float(np.linalg.norm(self.coords(v)) / np.linalg.norm(v))

    def orth_ratio(self, v):
        """``|P2perp v| / |v|``."""
        return float(np.linalg.norm(self.complement(v)) / np.linalg.norm(v))


def _as_matrix(vectors):
    rows = [np.ravel(getattr(v, "values", v)) for v in vectors]
    return np.stack(rows).astype(np.float64)


def fit_top2_subspace(step_gradients):
    """Top-2 right singular directions of the stacked (T, p) gradient matrix.

    Uses the T x T Gram matrix, which is cheap when T is much smaller than p.
    A rank-1 stack is completed with an arbitrary orthogonal direction.
    """
    m = _as_matrix(step_gradients)
    if m.shape[0] < 2:
        raise ValueError("need at least two gradients")
    if m.shape[1] < 2:
        raise ValueError("need an ambient dimension of at least two")
    if not np.any(m):
        raise ValueError("all gradients are zero")
    evals, evecs = np.linalg.eigh(m @ m.T)
    order = np.argsort(evals)[::-1]
    top = evals[order[0]]
    basis = []
    for k in order[:2]:
        if evals[k] <= top * 1e-24:
            break
        v = m.T @ evecs[:, k]
        for b in basis:
            v = v - (b @ v) * b
        basis.append(v / np.linalg.norm(v))
    while len(basis) < 2:
        # deterministic completion: the standard basis vector least aligned with the span
        e = np.eye(m.shape[1])
        resid = e - (e @ basis[0])[:, None] * basis[0][None, :]
        v = resid[int(np.argmax(np.linalg.norm(resid, axis=1)))]
        basis.append(v / np.linalg.norm(v))
    return SubspaceProjector(np.stack(basis))


def projection_ratio_series(update, projector=None):
    """Per-step ``|P2 g_t| / |g_t|`` over the recorded local gradients."""
    if not update.step_gradients:
        raise ValueError("update has no recorded step gradients")
    projector = projector or fit_top2_subspace(update.step_gradients)
    return [projector.ratio(g.values) for g in update.step_gradients]


def estimate_g2(step_gradients, projector=None):
    """Largest orthogonal leakage ``max_t |P2perp g_t| / |g_t|`` (conservative G2)."""
    projector = projector or fit_top2_subspace(step_gradients)
    return max(projector.orth_ratio(np.ravel(getattr(g, "values", g))) for g in step_gradients)


# ---------------------------------------------------------------- alpha sweeps

def alpha_sweep_fn(grad_fn, w0, wT, resolution=101):
    """``[(alpha, cos(w0 - wT, grad(alpha w0 + (1 - alpha) wT)))]`` on a uniform grid."""
    w0, wT = np.asarray(w0, dtype=np.float64), np.asarray(wT, dtype=np.float64)
    d = w0 - wT
    if not np.any(d):
        raise DegenerateUpdateError("w0 == wT")
    grid = np.linspace(0.0, 1.0, int(resolution))
    return [(float(a), cosine(d, grad_fn(a * w0 + (1 - a) * wT))) for a in grid]


def alpha_sweep(spec, update, dataset, resolution=101):
    if update.is_degenerate():
        raise DegenerateUpdateError("w0 == wT")
    grid = np.linspace(0.0, 1.0, int(resolution))
    d = update.reversed_update
    out = []
    for a in grid:
        w = interpolate(update.w0, update.wT, float(a))
        out.append((float(a), cosine(d, grad_weights(spec, w, dataset.inputs,
                                                     dataset.labels).values)))
    return out


def best_alpha(grad_fn, w0, wT, resolution=101):
    """Refine the grid maximiser of the cosine; returns ``(alpha, min L_sim)``."""
    sweep = alpha_sweep_fn(grad_fn, w0, wT, resolution)
    grid = np.array([a for a, _ in sweep])
    vals = np.array([c for _, c in sweep])
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    w0, wT = np.asarray(w0, dtype=np.float64), np.asarray(wT, dtype=np.float64)
    d = w0 - wT

    def lsim(a):
        return 1.0 - cosine(d, grad_fn(a * w0 + (1 - a) * wT))

    res = minimize_scalar(lsim, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    if res.fun < 1.0 - vals[i]:
        return float(res.x), float(res.fun)
    return float(grid[i]), float(1.0 - vals[i])


TABLE1_COLUMNS = ("min_ratio", "cosim_w0", "max_cosim")


def table1_stats(runs):
    """Mean and sample standard deviation of each per-run statistic.

    ``runs`` is a sequence of mappings with keys ``min_ratio`` (smallest
    per-step projection ratio), ``cosim_w0`` (cosine at the ``w0`` endpoint) and
    ``max_cosim`` (largest cosine over the alpha grid).
    """
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError("need at least two runs")
    out = {}
    for key in TABLE1_COLUMNS:
        vals = np.array([float(r[key]) for r in runs])
        out[key] = (float(vals.mean()), float(vals.std(ddof=1)))
    return out


# ---------------------------------------------------------------- bounds

class BoundPreconditionError(ValueError):
    """Inputs violate a hypothesis of the bound."""


class BoundOverflowError(OverflowError):
    """``(1 + eta * beta) ** (T - 1)`` is not representable."""


@dataclass(frozen=True)
class BoundInputs:
    """Constants entering the surrogate-model bounds.

    ``loss_wT_gd`` is the loss at the end of the noiseless GD path started at
    ``w0`` (defaults to ``loss_wT``); ``loss_floor`` stands in for the global
    minimum loss, which is unknown for networks (0 is a valid floor for
    cross-entropy).
    """

    G2: float
    L: float
    beta: float
    eta: float
    T: int
    loss_w0: float
    loss_wT: float
    gamma: float = math.inf
    E_max: float = 0.0
    loss_wT_gd: float | None = None
    loss_floor: float = 0.0

    def __post_init__(self):
        for name in ("G2", "L", "beta", "eta", "gamma", "E_max"):
            if getattr(self, name) < 0:
                raise BoundPreconditionError(f"{name} must be non-negative")
        if self.T < 1:
            raise BoundPreconditionError("T must be at least 1")

    @property
    def loss_gd(self):
        return self.loss_wT if self.loss_wT_gd is None else self.loss_wT_gd

    @property
    def G_eta_beta_sq(self):
        return self.G2 ** 2 * self.eta / (1.0 - self.eta * self.beta / 2.0)

    @property
    def C_GD(self):
        drop = self.loss_w0 - self.loss_wT
        return math.sqrt(self.T * self.G_eta_beta_sq * self.L ** 2 / drop)


def _check_gd(b):
    if not b.loss_w0 > b.loss_wT:
        raise BoundPreconditionError("need loss(w0) > loss(wT)")
    if not b.eta * b.beta < 1:
        raise BoundPreconditionError("need eta * beta < 1")
    if not b.eta < 1:
        raise BoundPreconditionError("need eta < 1")


def eval_bound_gd(b):
    """Upper bound on the best surrogate's cosine loss for a GD path (no truncation term)."""
    _check_gd(b)
    return (b.G2 + b.C_GD) ** 2


def eval_bound_sgd(b):
    """Bound and success probability for an SGD path; returns ``(bound, prob)``."""
    _check_gd(b)
    c_gd = b.C_GD
    if not c_gd < 1:
        raise BoundPreconditionError(f"need C_GD < 1, got {c_gd:.4g}")
    drop_gd = b.loss_w0 - b.loss_gd
    if not drop_gd > 0:
        raise BoundPreconditionError("need loss(w0) > loss(wT') on the GD path")
    try:
        growth = math.pow(1.0 + b.eta * b.beta, b.T - 1)
    except OverflowError:
        raise BoundOverflowError("(1 + eta*beta)^(T-1) overflows") from None
    if math.isinf(growth):
        raise BoundOverflowError("(1 + eta*beta)^(T-1) overflows")
    c = 1.0 / (math.sqrt(b.eta) * growth)
    if b.E_max == 0:
        r = math.inf
    else:
        r = min(c * drop_gd ** 2 / (4 * b.L ** 2 * b.T * b.E_max ** 2),
                c * drop_gd / (4 * b.L * b.E_max))
    prob = 1.0 - 3 * b.T * math.exp(-r) if math.isfinite(r) else 1.0
    c_eta = 1.0 / (1.0 - math.sqrt(b.eta))
    if math.isinf(b.gamma):
        second = 0.0
    else:
        gap = b.loss_gd - b.loss_floor
        if not gap > 0:
            raise BoundPreconditionError("need loss(wT') above the loss floor")
        second = (2 * b.eta ** 2 * b.beta ** 2 * b.T / (b.gamma * (1 - b.G2 ** 2))) \
            * drop_gd / gap
    third = c_eta * (1 + b.G2) / (1 - c_gd) * (
        c_gd + b.L * b.T * b.E_max * b.eta * growth / drop_gd)
    bound = 2 * b.eta + second + third + b.G2 ** 2
    return bound, prob


# ---------------------------------------------------------------- trajectories

def gd_path(grad_fn, w0, eta, steps):
    """Iterates ``w_0 .. w_steps`` of plain gradient descent."""
    path = [np.asarray(w0, dtype=np.float64)]
    for _ in range(int(steps)):
        path.append(path[-1] - eta * grad_fn(path[-1]))
    return path


def estimate_smoothness(grad_fn, path):
    """Empirical (L, beta): max gradient norm and max gradient-change ratio along ``path``."""
    grads = [grad_fn(w) for w in path]
    L = max(float(np.linalg.norm(g)) for g in grads)
    beta = 0.0
    for (wa, ga), (wb, gb) in zip(zip(path, grads), zip(path[1:], grads[1:])):
        step = np.linalg.norm(wb - wa)
        if step > 0:
            beta = max(beta, float(np.linalg.norm(gb - ga) / step))
    return L, beta


class FlowError(ValueError):
    """The 2D flow check cannot run (stationary start or zero duration)."""


def _sin_angle(u, v):
    cross = u[0] * v[1] - u[1] * v[0]
    return cross / (np.linalg.norm(u) * np.linalg.norm(v))


def flow_endpoint(grad_fn, w0, duration, rtol=1e-12, atol=1e-14):
    """Reference gradient-flow end point from an adaptive high-order integrator."""
    sol = solve_ivp(lambda t, w: -grad_fn(w), (0.0, float(duration)),
                    np.asarray(w0, dtype=np.float64), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise FlowError(f"flow integration failed: {sol.message}")
    return sol.y[:, -1]


def _parallel_point(grad_fn, w0, wT, resolution):
    d = w0 - wT

    def signed(a):
        g = grad_fn(a * w0 + (1 - a) * wT)
        return _sin_angle(g, d), float(g @ d)

    grid = np.linspace(0.0, 1.0, int(resolution))
    vals = [signed(a) for a in grid]
    best_a, best_r = None, math.inf
    for a, (s, dot) in zip(grid, vals):
        if dot > 0 and abs(s) < best_r:
            best_a, best_r = float(a), abs(s)
    for (a0, (s0, d0)), (a1, (s1, d1)) in zip(zip(grid, vals), zip(grid[1:], vals[1:])):
        if s0 == 0 or s0 * s1 > 0 or not (d0 > 0 and d1 > 0):
            continue
        root = brentq(lambda a: signed(a)[0], a0, a1, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        r = abs(signed(root)[0])
        if r < best_r:
            best_a, best_r = float(root), r
    if best_a is None:
        raise FlowError("no point on the segment has a gradient aligned with the update")
    return best_a, best_r


def flow2d_check(grad_fn, w0, duration, eta_flow=1e-4, resolution=1001):
    """Look for a surrogate on the segment whose gradient is parallel to the flow update.

    The flow is approximated by ``round(duration / eta_flow)`` gradient descent
    steps and the segment to that end point is searched (grid scan, then root
    finding on the signed sine). The returned residual is ``|sin angle|`` of the
    chosen surrogate measured against the reference flow end point, so it
    reflects the discretisation error and shrinks with ``eta_flow``.
    Returns ``(alpha, residual)``.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    if w0.shape != (2,):
        raise ValueError("flow2d_check works in two dimensions")
    if not np.any(grad_fn(w0)):
        raise FlowError("gradient vanishes at the start point")
    steps = int(round(duration / eta_flow))
    if steps < 1:
        raise FlowError("zero duration: the flow does not move")
    wT = gd_path(grad_fn, w0, eta_flow, steps)[-1]
    if not np.any(w0 - wT):
        raise FlowError("the flow end point equals the start point")
    alpha, _ = _parallel_point(grad_fn, w0, wT, resolution)
    ref = flow_endpoint(grad_fn, w0, steps * eta_flow)
    g = grad_fn(alpha * w0 + (1 - alpha) * ref)
    return alpha, float(abs(_sin_angle(g, w0 - ref)))


def write_series(path, setting, xs, ys, x_name="t", append=False):
    """CSV rows of (setting, x, value) for plotting figure-style series."""
    rows = [{"setting": setting, x_name: x, "value": y} for x, y in zip(xs, ys)]
    return write_csv(path, rows, ["setting", x_name, "value"], append=append)
