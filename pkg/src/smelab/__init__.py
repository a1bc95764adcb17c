"""Gradient inversion of multi-step FedAvg updates through surrogate models.

Numpy-only building blocks: a reverse-mode autodiff engine, small victim
networks, a FedAvg client simulator, the IG / SME / SIM reconstruction
attacks, analysis instruments and reconstruction scoring.
"""
from . import attacks, autodiff, data, diagnostics, evaluation, fedavg, functional, models
from .attacks import AttackConfig, attack_ig, attack_sim, attack_sme, recover_labels
from .data import Dataset, load_idx, synth_dataset
from .evaluation import pair_and_score, psnr
from .fedavg import ClientConfig, LocalUpdate, client_update, run_fl
from .models import ModelSpec, ParamVector, cnn2, init_weights, mlp

__version__ = "0.1.0"
