# %% [markdown]
# # Why a point between w0 and wT works as a surrogate
#
# Three instruments: how much of each update lives in a 2D subspace, how
# well the gradient at each point on the segment lines up with the update,
# and a check on an exactly solvable 2D quadratic.

# %%
import numpy as np

from smelab import ClientConfig, client_update, diagnostics as dg, init_weights, mlp
from smelab import synth_dataset

spec = mlp(input_shape=(1, 8, 8), classes=10, hidden=(32,))
data = synth_dataset("striped-patterns", 50, seed=1)
update = client_update(spec, init_weights(spec, 1), data,
                       ClientConfig(epochs=10, batch_size=10, lr=0.05, seed=1),
                       record_steps=True)

# %% [markdown]
# Fraction of each partial update `w_t - w0` captured by the top-2
# subspace of the step gradients.

# %%
ratios = dg.projection_ratio_series(update)
print("ratio at steps 1, 5, 25, 50:", np.round(np.asarray(ratios)[[0, 4, 24, 49]], 4))
print("min over all steps %.4f" % min(ratios))

# %% [markdown]
# Cosine between `w0 - wT` and the full-batch gradient at
# `alpha*w0 + (1-alpha)*wT`.  It typically peaks strictly inside the segment.

# %%
sweep = dg.alpha_sweep(spec, update, data, 21)
for a, c in sweep[::4]:
    print(f"alpha {a:.2f}  cos {c:.4f}")
best = max(sweep, key=lambda p: p[1])
print("best alpha %.2f, cos %.4f vs %.4f at w0" % (best[0], best[1], sweep[-1][1]))

# %% [markdown]
# On f(w) = (w1^2 + 10 w2^2)/2 the gradient flow is known in closed form
# and some point on the discretised segment has a gradient parallel to
# the displacement; the residual shrinks with the flow step size.

# %%
grad = lambda w: np.array([1.0, 10.0]) * w
for eta in (1e-2, 1e-3, 1e-4):
    alpha, res = dg.flow2d_check(grad, np.array([1.0, 1.0]), 1.0, eta)
    print(f"eta_flow {eta:.0e}: alpha* {alpha:.4f}  residual {res:.1e}")

# %% [markdown]
# Finally, the GD bound on the best achievable L_sim for this update.

# %%
from smelab import runner

for row in runner.bound_report(spec, update, data):
    print(f"{row['quantity']:18s} {row['value']:>12s} {row['note']}")
