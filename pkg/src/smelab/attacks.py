"""Reconstruction attacks on FedAvg weight updates.

* ``attack_ig`` matches the reversed update ``w0 - wT`` against the dummy-data
  gradient at ``w0`` (cosine loss plus a total-variation prior).
* ``attack_sme`` matches it at a surrogate ``alpha * w0 + (1 - alpha) * wT``
  and optimizes ``alpha`` jointly with the dummy data.
* ``attack_sim`` unrolls the client's local SGD on the dummy data and matches
  the simulated end point. It knows the protocol (E, B, lr, shuffle seed) and
  has no order-invariant prior or batch-assignment search.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .fedavg import batch_schedule
from .models import forward_loss, grad_weights

__all__ = [
    "AttackConfig", "AttackResult", "DegenerateUpdateError", "DegenerateGradientError",
    "ResourceLimitError", "Adam", "cosine_similarity_loss", "total_variation",
    "clamp", "attack_ig", "attack_sme", "attack_sim", "simulation_loss",
    "recover_labels", "expand_labels", "run_attack",
]


class DegenerateUpdateError(ValueError):
    """The observed update is zero (w0 == wT), so there is nothing to invert."""


class DegenerateGradientError(ValueError):
    """A cosine loss was requested for a zero-norm vector."""


class ResourceLimitError(RuntimeError):
    """The unrolled simulation would exceed the configured step cap."""


@dataclass(frozen=True)
class AttackConfig:
    iterations: int = 1000
    lr_data: float = 1.0
    lr_alpha: float = 0.001
    tv_lambda: float = 0.01
    alpha0: float = 0.5
    pixel_bounds: tuple = (0.0, 1.0)
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    lr_decay: bool = True
    seed: int = 0
    sim_loss: str = "cosine"
    sim_max_steps: int = 64

    def __post_init__(self):
        if not 0.0 <= self.alpha0 <= 1.0:
            raise ValueError("alpha0 must lie in [0, 1]")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.tv_lambda < 0:
            raise ValueError("tv_lambda must be non-negative")
        if self.sim_loss not in ("cosine", "euclidean"):
            raise ValueError("sim_loss must be 'cosine' or 'euclidean'")
        lo, hi = self.pixel_bounds
        if not lo < hi:
            raise ValueError("pixel_bounds must satisfy lo < hi")

    def lr_scale(self, k):
        """Step decay by 10x at 3/8, 5/8 and 7/8 of the run."""
        if not self.lr_decay:
            return 1.0
        k_max = self.iterations
        drops = sum(k >= int(k_max * f) for f in (3 / 8, 5 / 8, 7 / 8))
        return 0.1 ** drops


@dataclass
class AttackResult:
    method: str
    inputs: np.ndarray
    labels: np.ndarray
    loss_trace: np.ndarray
    final_lsim: float
    alpha_trace: np.ndarray | None = None
    final_alpha: float | None = None
    wallclock: float = 0.0
    extra: dict = field(default_factory=dict)


class Adam:
    """Adam with bias correction over a numpy array (or float) parameter."""

    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, param, grad, scale=1.0):
        grad = np.asarray(grad, dtype=np.float64)
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return param - (self.lr * scale) * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_similarity_loss(u, v):
    """``1 - <u, v> / (|u| |v|)`` for flat vectors, as a graph node."""
    u, v = ad.constant(u), ad.constant(v)
    if u.shape != v.shape:
        raise ad.ShapeError("cosine_similarity_loss", u.shape, v.shape)
    if not np.any(u.value) or not np.any(v.value):
        raise DegenerateGradientError("cosine loss is undefined for a zero-norm vector")
    return 1.0 - ad.inner(u, v) / (ad.l2_norm(u) * ad.l2_norm(v))


def _prior(x, cfg):
    # lambda weighs the per-pixel TV so its scale does not grow with image size
    pixels = int(np.prod(x.shape[1:]))
    return (cfg.tv_lambda / pixels) * total_variation(x)


def total_variation(images):
    """Anisotropic TV: absolute neighbour differences summed, divided by batch size."""
    x = ad.constant(images)
    n = x.shape[0]
    dh = ad.absolute(x[..., :, 1:] - x[..., :, :-1])
    dv = ad.absolute(x[..., 1:, :] - x[..., :-1, :])
    return (ad.sum(dh) + ad.sum(dv)) * (1.0 / n)


def clamp(x, bounds):
    lo, hi = bounds
    return np.clip(x, lo, hi)


def recover_labels(spec, update):
    """Classes whose classifier rows in ``w0 - wT`` have a negative sum.

    ``w0 - wT`` points along the accumulated gradient; a present class pulls its
    row's gradient negative when the penultimate activations are non-negative.
    Exact for one local step on an untrained ReLU network with at most one
    sample per class; a heuristic otherwise.
    """
    rows = update.w0.like(update.reversed_update).unflatten()[spec.classifier]
    sums = rows.sum(axis=1)
    return [int(c) for c in np.flatnonzero(sums < 0)]


def expand_labels(present, n):
    """Fill ``n`` label slots by cycling through the recovered classes."""
    present = list(present)
    if not present:
        raise ValueError("no classes to expand")
    return np.array([present[i % len(present)] for i in range(n)], dtype=np.int64)


def _check_inputs(update, labels):
    if update.is_degenerate():
        raise DegenerateUpdateError("w0 == wT: the update carries no gradient signal")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (update.n,):
        raise ValueError(f"need {update.n} labels, got {labels.size}")
    return labels


def _init_dummy(spec, n, cfg):
    lo, hi = cfg.pixel_bounds
    rng = np.random.default_rng(cfg.seed)
    return rng.uniform(lo, hi, size=(n,) + spec.input_shape)


def _gradient_matching(spec, update, labels, cfg, alpha0, optimize_alpha, method):
    labels = _check_inputs(update, labels)
    start = time.perf_counter()
    w0, wT = update.w0.values, update.wT.values
    target = update.reversed_update
    # d w_hat / d alpha
    direction = w0 - wT
    x = _init_dummy(spec, update.n, cfg)
    alpha = float(alpha0)
    opt_x = Adam(cfg.lr_data, cfg.betas, cfg.eps)
    opt_a = Adam(cfg.lr_alpha, cfg.betas, cfg.eps)
    losses, lsims, alphas = [], [], []
    for k in range(cfg.iterations):
        w_hat = Node(alpha * w0 + (1.0 - alpha) * wT, requires_grad=True)
        xn = Node(x, requires_grad=True)
        g = grad_weights(spec, w_hat, xn, labels, create_graph=True)
        loss = cosine_similarity_loss(target, g)
        lsims.append(loss.item())
        if cfg.tv_lambda:
            loss = loss + _prior(xn, cfg)
        gx, gw = ad.grad(loss, [xn, w_hat])
        scale = cfg.lr_scale(k)
        x = clamp(opt_x.step(x, gx, scale), cfg.pixel_bounds)
        if optimize_alpha:
            g_alpha = float(gw @ direction)
            alpha = float(np.clip(opt_a.step(alpha, g_alpha, scale), 0.0, 1.0))
        losses.append(loss.item())
        alphas.append(alpha)
    g_final = grad_weights(spec, alpha * w0 + (1.0 - alpha) * wT, x, labels).values
    final = cosine_similarity_loss(target, g_final).item()
    return AttackResult(
        method=method, inputs=x, labels=labels, loss_trace=np.array(losses),
        final_lsim=final,
        alpha_trace=np.array(alphas) if optimize_alpha else None,
        final_alpha=alpha if optimize_alpha else None,
        wallclock=time.perf_counter() - start, extra={"lsim_trace": np.array(lsims)})


def attack_ig(spec, update, labels, cfg=AttackConfig()):
    """Invert the update as if it were a single gradient at ``w0``."""
    return _gradient_matching(spec, update, labels, cfg, 1.0, False, "ig")


def attack_sme(spec, update, labels, cfg=AttackConfig()):
    """Invert the update at a surrogate model on the segment from ``w0`` to ``wT``."""
    return _gradient_matching(spec, update, labels, cfg, cfg.alpha0, True, "sme")


def simulation_loss(spec, update, inputs, labels, protocol, variant="cosine"):
    """Distance between the simulated and the observed local training end point.

    ``inputs`` may be a :class:`Node`; local SGD is unrolled with
    ``create_graph=True`` so the result is differentiable with respect to it.
    ``euclidean`` gives ``|w~T - wT|``, ``cosine`` gives the cosine loss between
    ``w0 - w~T`` and ``w0 - wT``.
    """
    x = ad.constant(inputs)
    labels = np.asarray(labels, dtype=np.int64)
    w = Node(update.w0.values, requires_grad=True)
    for idx in batch_schedule(update.n, protocol):
        loss = forward_loss(spec, w, ad.getitem(x, idx), labels[idx])
        g = ad.grad(loss, w, create_graph=True)
        w = w - protocol.lr * g
    if variant == "euclidean":
        return ad.l2_norm(w - update.wT.values)
    if variant == "cosine":
        return cosine_similarity_loss(update.reversed_update, update.w0.values - w)
    raise ValueError(f"unknown simulation loss {variant!r}")


def attack_sim(spec, update, labels, cfg=AttackConfig(), protocol=None):
    """Reconstruct by differentiating through an unrolled simulation of local SGD."""
    protocol = protocol or update.meta
    if protocol is None:
        raise ValueError(
            "the simulation attack needs the client's epochs, batch size and learning rate")
    labels = _check_inputs(update, labels)
    steps = protocol.steps(update.n)
    if steps > cfg.sim_max_steps:
        raise ResourceLimitError(
            f"unrolling {steps} local steps exceeds the cap of {cfg.sim_max_steps}")
    start = time.perf_counter()
    x = _init_dummy(spec, update.n, cfg)
    opt = Adam(cfg.lr_data, cfg.betas, cfg.eps)
    losses = []
    for k in range(cfg.iterations):
        xn = Node(x, requires_grad=True)
        loss = simulation_loss(spec, update, xn, labels, protocol, cfg.sim_loss)
        if cfg.tv_lambda:
            loss = loss + _prior(xn, cfg)
        gx = ad.grad(loss, xn)
        x = clamp(opt.step(x, gx, cfg.lr_scale(k)), cfg.pixel_bounds)
        losses.append(loss.item())
    final = simulation_loss(spec, update, x, labels, protocol, "cosine").item()
    return AttackResult(
        method="sim", inputs=x, labels=labels, loss_trace=np.array(losses),
        final_lsim=final, wallclock=time.perf_counter() - start,
        extra={"steps": steps, "variant": cfg.sim_loss})


def run_attack(method, spec, update, labels, cfg=AttackConfig(), protocol=None):
    if method == "ig":
        return attack_ig(spec, update, labels, cfg)
    if method == "sme":
        return attack_sme(spec, update, labels, cfg)
    if method == "sim":
        return attack_sim(spec, update, labels, cfg, protocol)
    raise ValueError(f"unknown attack method {method!r}")
