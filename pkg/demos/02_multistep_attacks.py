# %% [markdown]
# # Inverting a multi-step FedAvg update
#
# A client runs several local SGD steps and ships only `w0 -> wT`.
# IG treats the whole difference as one gradient; SME instead matches
# against a gradient taken at a learned point on the segment between the
# two weights; SIM replays the local training on dummy data.

# %%
import numpy as np

from smelab import AttackConfig, ClientConfig, attacks, client_update, evaluation
from smelab import init_weights, mlp, synth_dataset

# %%
spec = mlp(input_shape=(1, 8, 8), classes=10, hidden=(128,))
data = synth_dataset("striped-patterns", 10, seed=4, labels=list(range(10)))
protocol = ClientConfig(epochs=20, batch_size=10, lr=0.1, seed=4)
update = client_update(spec, init_weights(spec, 4), data, protocol)
print("local steps:", update.steps)

# %% [markdown]
# The sign rule on the last-layer update reads the label exactly off a
# one-sample, one-step update.  With a batch, or after many steps, it only
# finds some of the labels, so the attacks below are handed the true ones.

# %%
single = synth_dataset("striped-patterns", 1, seed=4, labels=[6])
one = client_update(spec, init_weights(spec, 4), single, ClientConfig(1, 1, 0.1))
print("one sample, one step :", attacks.recover_labels(spec, one), "(true [6])")
print("ten samples, 20 steps:", attacks.recover_labels(spec, update))
labels = data.labels

# %%
cfg = AttackConfig(iterations=500, seed=0)
results = {
    "ig": attacks.attack_ig(spec, update, labels, cfg),
    "sme": attacks.attack_sme(spec, update, labels, cfg),
    "sim": attacks.attack_sim(spec, update, labels, cfg, protocol=protocol),
}
for name, res in results.items():
    report = evaluation.pair_and_score(res.inputs, data.inputs)
    extra = "" if res.final_alpha is None else f"  alpha {res.final_alpha:.3f}"
    print(f"{name:4s} L_sim {res.final_lsim:.4f}  PSNR {report.mean_psnr:5.2f} dB{extra}")

# %% [markdown]
# SIM knows the full protocol here (batch size equals the dataset, so the
# replay is exact), which is why it tends to win at this scale.  SME only
# needs `w0`, `wT` and the labels.
