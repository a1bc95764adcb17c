"""FedAvg simulation: client local SGD, weighted aggregation and a round loop."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .models import ParamVector, grad_weights, read_params, write_params

__all__ = [
    "ClientConfig", "LocalUpdate", "batch_schedule", "client_update", "server_round",
    "run_fl", "derive_seed", "save_update", "load_update",
]


def derive_seed(master, index):
    """Counter-based child seed: adding children never perturbs earlier ones."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


@dataclass(frozen=True)
class ClientConfig:
    epochs: int = 1
    batch_size: int = 10
    lr: float = 0.004
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")

    def steps(self, n):
        """Local step count E * ceil(N / B)."""
        return self.epochs * math.ceil(n / self.batch_size)


@dataclass
class LocalUpdate:
    """What the adversary observes after one round, plus optional recordings."""

    w0: ParamVector
    wT: ParamVector
    n: int
    meta: ClientConfig | None = None
    step_gradients: list | None = None

    def __post_init__(self):
        self.w0.check_layout(self.wT)
        if self.n < 1:
            raise ValueError("data size must be at least 1")

    @property
    def reversed_update(self):
        """``w0 - wT``, the direction matched against data gradients."""
        return self.w0.values - self.wT.values

    @property
    def steps(self):
        if self.meta is None:
            return None
        return self.meta.steps(self.n)

    def is_degenerate(self):
        return not np.any(self.reversed_update)


def batch_schedule(n, cfg):
    """Index batches for every local step: per-epoch shuffle, then split."""
    rng = np.random.default_rng(cfg.seed)
    batches = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for start in range(0, n, cfg.batch_size):
            batches.append(order[start:start + cfg.batch_size])
    return batches


def client_update(spec, w0, dataset, cfg, record_steps=False):
    """Run E epochs of sequential mini-batch SGD from ``w0`` on ``dataset``."""
    n = len(dataset)
    if n < 1:
        raise ValueError("client dataset is empty")
    w = w0.values.copy()
    recorded = [] if record_steps else None
    for idx in batch_schedule(n, cfg):
        g = grad_weights(spec, w, dataset.inputs[idx], dataset.labels[idx]).values
        if record_steps:
            recorded.append(w0.like(g))
        w = w - cfg.lr * g
    return LocalUpdate(w0, w0.like(w), n, cfg, recorded)


def server_round(updates):
    """Data-size weighted average of the clients' final weights."""
    if not updates:
        raise ValueError("server_round needs at least one client update")
    first = updates[0].wT
    total = float(sum(u.n for u in updates))
    acc = np.zeros_like(first.values)
    for u in updates:
        first.check_layout(u.wT)
        acc += (u.n / total) * u.wT.values
    if len(updates) == 1:
        return first
    return first.like(acc)


def run_fl(spec, w_init, clients, rounds, participation=1.0, seed=0):
    """Simulate ``rounds`` of FedAvg and return the global weights after each.

    ``clients`` is a list of (Dataset, ClientConfig). Each client joins a round
    independently with probability ``participation``; a round nobody joins
    keeps the previous global weights.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    rng = np.random.default_rng(seed)
    w = w_init
    checkpoints = []
    for r in range(rounds):
        joined = rng.random(len(clients)) < participation
        updates = [
            client_update(spec, w, data, replace(cfg, seed=derive_seed(cfg.seed, r)))
            for (data, cfg), on in zip(clients, joined) if on
        ]
        if updates:
            w = server_round(updates)
        checkpoints.append(w)
    return checkpoints


# ---------------------------------------------------------------- persistence

UPDATE_MAGIC = b"SMELUPD1"


def save_update(path, update):
    """Persist (w0, wT, N), protocol metadata and any recorded step gradients."""
    meta = update.meta
    with open(path, "wb") as fh:
        fh.write(UPDATE_MAGIC)
        fh.write(struct.pack("<QB", update.n, meta is not None))
        if meta is not None:
            fh.write(struct.pack("<IIdqB", meta.epochs, meta.batch_size, meta.lr,
                                 meta.seed, meta.shuffle))
        write_params(fh, update.w0)
        write_params(fh, update.wT)
        steps = update.step_gradients or []
        fh.write(struct.pack("<I", len(steps)))
        for g in steps:
            write_params(fh, g)


def load_update(path):
    with open(path, "rb") as fh:
        if fh.read(len(UPDATE_MAGIC)) != UPDATE_MAGIC:
            raise ValueError(f"{path}: not a local update file (bad magic)")
        n, has_meta = struct.unpack("<QB", fh.read(9))
        meta = None
        if has_meta:
            e, b, lr, seed, shuffle = struct.unpack("<IIdqB", fh.read(4 + 4 + 8 + 8 + 1))
            meta = ClientConfig(e, b, lr, seed, bool(shuffle))
        w0 = read_params(fh)
        wT = read_params(fh)
        (count,) = struct.unpack("<I", fh.read(4))
        steps = [read_params(fh) for _ in range(count)] or None
    return LocalUpdate(w0, wT, n, meta, steps)
