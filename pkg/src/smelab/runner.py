"""Experiment orchestration behind the command line.

A task is one (setting, repeat index) pair. Its seeds fan out from the master
seed, so a task's outputs do not depend on which worker ran it or on how many
other repeats exist.
"""
from __future__ import annotations

import logging
import math
import os
from collections import namedtuple
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import attacks, diagnostics as dg
from .config import ExperimentConfig, dump_config
from .data import Dataset, dump_images, load_idx, synth_dataset, write_csv
from .evaluation import pair_and_score
from .fedavg import client_update, derive_seed, load_update, save_update
from .models import forward_loss, grad_weights, init_weights

__all__ = [
    "RESULT_COLUMNS", "WALLCLOCK_COLUMNS", "TaskSeeds", "task_seeds", "build_dataset",
    "train_client", "attack_update", "diagnose", "compare", "summarize",
    "save_dataset", "load_dataset", "RunnerError",
]

log = logging.getLogger("smelab")

RESULT_COLUMNS = ("dataset", "E", "N", "B", "T", "R", "method", "seed",
                  "final_Lsim", "mean_PSNR", "wallclock_s")
WALLCLOCK_COLUMNS = ("wallclock_s",)
SIM_NOTE = "sim is a DLFA-lite baseline (no order-invariant prior, no batch reassignment search)"
PEAK_NOTE = "PSNR peak 1.0 on [0,1] data"


class RunnerError(RuntimeError):
    """A subcommand cannot run with the given inputs."""


TaskSeeds = namedtuple("TaskSeeds", "data init client attack")


def task_seeds(master, index):
    base = derive_seed(master, index)
    return TaskSeeds(*(derive_seed(base, k) for k in range(4)))


def _num(x):
    return repr(float(x))


# ---------------------------------------------------------------- data

def build_dataset(cfg: ExperimentConfig, seed):
    d = cfg.data
    if d.kind == "idx":
        if not (d.idx_images and d.idx_labels):
            raise RunnerError("data.kind = idx needs data.idx_images and data.idx_labels")
        full = load_idx(d.idx_images, d.idx_labels, classes=d.classes)
        if full.shape != d.shape:
            raise RunnerError(f"IDX images have shape {full.shape}, config says {d.shape}")
        if d.n > len(full):
            raise RunnerError(f"requested {d.n} samples but the files hold {len(full)}")
        idx = np.sort(np.random.default_rng(seed).choice(len(full), d.n, replace=False))
        return full.subset(idx)
    return synth_dataset(d.kind, d.n, d.shape, d.classes, seed)


def save_dataset(path, dataset, attack_seed, index=0):
    """Float dataset plus the task's attack seed and repeat index (npz)."""
    np.savez(path, inputs=dataset.inputs, labels=dataset.labels,
             classes=dataset.classes, attack_seed=attack_seed, index=index)


def load_dataset(path):
    """Returns ``(dataset, attack_seed, index)``."""
    with np.load(path) as z:
        ds = Dataset(z["inputs"], z["labels"], int(z["classes"]), {"source": str(path)})
        return ds, int(z["attack_seed"]), int(z["index"])


def _tag(epochs, batch, index):
    return f"E{epochs}_B{batch}_s{index}"


# ---------------------------------------------------------------- tasks

def _train(cfg, epochs, batch, index):
    seeds = task_seeds(cfg.run.master_seed, index)
    spec = cfg.model_spec()
    dataset = build_dataset(cfg, seeds.data)
    w0 = init_weights(spec, seeds.init)
    ccfg = cfg.client_config(epochs, batch, seeds.client)
    update = client_update(spec, w0, dataset, ccfg, record_steps=cfg.run.record_steps)
    return spec, dataset, update, seeds


def train_client(cfg, epochs=None, batch=None, index=None):
    """Train one client and persist ``update_<tag>.smeu`` and ``data_<tag>.npz``."""
    settings = cfg.settings()
    epochs = settings[0][0] if epochs is None else epochs
    batch = settings[0][1] if batch is None else batch
    index = cfg.run.seed if index is None else index
    _, dataset, update, seeds = _train(cfg, epochs, batch, index)
    out = cfg.run.output_dir
    os.makedirs(out, exist_ok=True)
    tag = _tag(epochs, batch, index)
    upath = os.path.join(out, f"update_{tag}.smeu")
    dpath = os.path.join(out, f"data_{tag}.npz")
    save_update(upath, update)
    save_dataset(dpath, dataset, seeds.attack, index)
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(dump_config(cfg))
    return upath, dpath


def _labels_for(cfg, spec, update, dataset):
    if cfg.run.labels == "recover":
        return attacks.expand_labels(attacks.recover_labels(spec, update), update.n)
    return dataset.labels


def _attack_row(cfg, spec, update, dataset, method, attack_seed, index, image_dir=None):
    acfg = replace(cfg.attack, seed=attack_seed)
    labels = _labels_for(cfg, spec, update, dataset)
    if method == "sim" and update.meta is None:
        raise RunnerError(
            "the simulation baseline needs the client's epochs E, batch size B and learning "
            "rate; the threat model grants it these but this update file carries no protocol "
            "metadata")
    result = attacks.run_attack(method, spec, update, labels, acfg)
    report = pair_and_score(result.inputs, dataset.inputs, final_lsim=result.final_lsim)
    if image_dir is not None and cfg.run.dump_images:
        ordered = np.empty_like(result.inputs)
        ordered[report.permutation] = result.inputs
        dump_images(ordered, image_dir, prefix=method)
    meta = update.meta
    return {
        "dataset": cfg.data.kind, "E": meta.epochs if meta else "",
        "N": update.n, "B": meta.batch_size if meta else "",
        "T": update.steps if meta else "", "R": 1, "method": method, "seed": index,
        "final_Lsim": _num(result.final_lsim), "mean_PSNR": _num(report.mean_psnr),
        "wallclock_s": f"{result.wallclock:.3f}",
    }


def _check_layout(spec, update):
    if tuple(update.w0.layout) != tuple(spec.layout):
        raise RunnerError("the update's weight layout does not match the configured model")


def attack_update(cfg, update_path, method, data_path=None, index=None):
    """Attack a persisted update; appends to ``attack.csv`` and dumps images."""
    update = load_update(update_path)
    spec = cfg.model_spec()
    _check_layout(spec, update)
    data_path = data_path or _sibling_data(update_path)
    dataset, attack_seed, stored = load_dataset(data_path)
    index = stored if index is None else index
    out = cfg.run.output_dir
    os.makedirs(out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(update_path))[0]
    img = os.path.join(out, "images", stem)
    row = _attack_row(cfg, spec, update, dataset, method, attack_seed, index, img)
    if cfg.run.dump_images:
        dump_images(dataset.inputs, img, prefix="orig")
    path = os.path.join(out, "attack.csv")
    write_csv(path, [row], RESULT_COLUMNS, append=True)
    return row, path


def _sibling_data(update_path):
    head, name = os.path.split(update_path)
    stem = os.path.splitext(name)[0]
    if not stem.startswith("update_"):
        raise RunnerError("cannot infer the data file; pass it explicitly")
    return os.path.join(head, "data_" + stem[len("update_"):] + ".npz")


def _compare_task(args):
    cfg, epochs, batch, index = args
    spec, dataset, update, seeds = _train(cfg, epochs, batch, index)
    img_root = os.path.join(cfg.run.output_dir, "images", _tag(epochs, batch, index))
    rows = [_attack_row(cfg, spec, update, dataset, m, seeds.attack, index,
                        os.path.join(img_root, m)) for m in cfg.run.methods]
    if cfg.run.dump_images:
        dump_images(dataset.inputs, os.path.join(img_root, "orig"), prefix="orig")
    return rows


def _sort_key(methods):
    order = {m: i for i, m in enumerate(methods)}
    return lambda r: (int(r["E"]), int(r["B"]), int(r["seed"]), order[r["method"]])


def compare(cfg, workers=None):
    """All (setting, repeat, method) runs; writes results.csv and summary.csv."""
    methods = list(cfg.run.methods)
    if len(methods) < 2:
        raise RunnerError("compare needs at least two methods")
    unknown = set(methods) - {"ig", "sme", "sim"}
    if unknown:
        raise RunnerError(f"unknown methods: {sorted(unknown)}")
    workers = cfg.run.workers if workers is None else workers
    tasks = [(cfg, e, b, i) for e, b in cfg.settings() for i in range(cfg.run.repeats)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_compare_task, tasks))
    else:
        chunks = [_compare_task(t) for t in tasks]
    rows = sorted((r for c in chunks for r in c), key=_sort_key(methods))
    out = cfg.run.output_dir
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "results.csv"), rows, RESULT_COLUMNS)
    summary, columns = summarize(rows, methods)
    write_csv(os.path.join(out, "summary.csv"), summary, columns)
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(dump_config(cfg))
    return rows, summary


def _mean_se(vals):
    vals = np.asarray(vals, dtype=np.float64)
    if vals.size < 2:
        return float(vals.mean()), 0.0
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def summarize(rows, methods):
    """Per-setting mean and standard error per method, plus SME's PSNR gain over the best baseline."""
    keys = ("dataset", "E", "N", "B", "T", "R")
    columns = list(keys)
    for m in methods:
        columns += [f"{m}_PSNR", f"{m}_PSNR_se", f"{m}_Lsim", f"{m}_Lsim_se"]
    columns += ["best_baseline", "delta_PSNR", "repeats", "notes"]
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, group in groups.items():
        row = dict(zip(keys, key))
        means = {}
        n_rep = 0
        for m in methods:
            sel = [r for r in group if r["method"] == m]
            n_rep = len(sel)
            p, p_se = _mean_se([float(r["mean_PSNR"]) for r in sel])
            s, s_se = _mean_se([float(r["final_Lsim"]) for r in sel])
            means[m] = p
            row.update({f"{m}_PSNR": _num(p), f"{m}_PSNR_se": _num(p_se),
                        f"{m}_Lsim": _num(s), f"{m}_Lsim_se": _num(s_se)})
        if n_rep < 2:
            log.warning("single repeat for setting %s: standard errors reported as 0", key)
        baselines = [m for m in methods if m != "sme"]
        if "sme" in methods and baselines:
            best = max(baselines, key=lambda m: means[m])
            row["best_baseline"] = best
            row["delta_PSNR"] = _num(means["sme"] - means[best])
        notes = [PEAK_NOTE] + ([SIM_NOTE] if "sim" in methods else [])
        row.update(repeats=n_rep, notes="; ".join(notes))
        out.append(row)
    return out, columns


# ---------------------------------------------------------------- diagnostics

def _full_grad_fn(spec, dataset):
    return lambda w: grad_weights(spec, w, dataset.inputs, dataset.labels).values


def _full_loss(spec, dataset, w):
    return forward_loss(spec, w, dataset.inputs, dataset.labels).item()


def bound_report(spec, update, dataset, loss_floor=0.0, resolution=101):
    """Measured constants, both bound values and the observed best-surrogate loss."""
    if not update.step_gradients:
        raise RunnerError("bounds mode needs an update with recorded step gradients")
    if update.meta is None:
        raise RunnerError("bounds mode needs the client's learning rate in the update metadata")
    eta, steps = update.meta.lr, len(update.step_gradients)
    grad_fn = _full_grad_fn(spec, dataset)
    path = [update.w0.values]
    for g in update.step_gradients:
        path.append(path[-1] - eta * g.values)
    L, beta = dg.estimate_smoothness(grad_fn, path)
    e_max = max(float(np.linalg.norm(g.values - grad_fn(w)))
                for g, w in zip(update.step_gradients, path))
    gd_end = dg.gd_path(grad_fn, update.w0.values, eta, steps)[-1]
    b = dg.BoundInputs(
        G2=dg.estimate_g2(update.step_gradients), L=L, beta=beta, eta=eta, T=steps,
        loss_w0=_full_loss(spec, dataset, update.w0.values),
        loss_wT=_full_loss(spec, dataset, update.wT.values),
        loss_wT_gd=_full_loss(spec, dataset, gd_end), E_max=e_max, loss_floor=loss_floor)
    _, observed = dg.best_alpha(grad_fn, update.w0.values, update.wT.values, resolution)
    rows = [{"quantity": k, "value": str(b.T) if k == "T" else _num(getattr(b, k)), "note": ""}
            for k in ("G2", "L", "beta", "eta", "T", "loss_w0", "loss_wT", "loss_wT_gd", "E_max")]
    rows.append({"quantity": "observed_min_Lsim", "value": _num(observed), "note": ""})
    for name, fn in (("bound_gd", dg.eval_bound_gd), ("bound_sgd", dg.eval_bound_sgd)):
        try:
            val = fn(b)
        except (dg.BoundPreconditionError, dg.BoundOverflowError) as exc:
            rows.append({"quantity": name, "value": "nan", "note": str(exc)})
            continue
        if isinstance(val, tuple):
            rows.append({"quantity": name, "value": _num(val[0]), "note": ""})
            rows.append({"quantity": "prob_sgd", "value": _num(val[1]), "note": ""})
        else:
            rows.append({"quantity": name, "value": _num(val), "note": ""})
    return rows


def diagnose(cfg, mode, update_path=None, data_path=None):
    """Write ``diagnose_<mode>.csv`` and return its path."""
    out = cfg.run.output_dir
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"diagnose_{mode}.csv")
    if mode == "flow2d":
        f = cfg.flow2d
        a = np.array([f.a1, f.a2])
        rows = []
        for eta in f.etas:
            alpha, res = dg.flow2d_check(lambda w: a * w, np.array(f.w0, dtype=np.float64),
                                         f.duration, eta, f.resolution)
            rows.append({"setting": f"quad_{f.a1:g}_{f.a2:g}", "eta_flow": _num(eta),
                         "alpha": _num(alpha), "residual": _num(res)})
        return write_csv(path, rows, ["setting", "eta_flow", "alpha", "residual"])
    if mode not in ("ratio", "sweep", "bounds"):
        raise RunnerError(f"unknown diagnose mode {mode!r}")
    if update_path is None:
        raise RunnerError(f"{mode} mode needs an update file")
    update = load_update(update_path)
    spec = cfg.model_spec()
    _check_layout(spec, update)
    setting = os.path.splitext(os.path.basename(update_path))[0]
    if mode == "ratio":
        if not update.step_gradients:
            raise RunnerError("ratio mode needs an update with recorded step gradients")
        series = dg.projection_ratio_series(update)
        return dg.write_series(path, setting, range(len(series)), [_num(v) for v in series])
    dataset, _, _ = load_dataset(data_path or _sibling_data(update_path))
    if mode == "sweep":
        sweep = dg.alpha_sweep(spec, update, dataset, cfg.diagnose.resolution)
        return dg.write_series(path, setting, [f"{a:.2f}" for a, _ in sweep],
                               [_num(c) for _, c in sweep], x_name="alpha")
    rows = bound_report(spec, update, dataset, cfg.diagnose.loss_floor, cfg.diagnose.resolution)
    return write_csv(path, rows, ["quantity", "value", "note"])
