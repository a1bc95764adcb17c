# %% [markdown]
# # A small reverse-mode engine, including gradients of gradients
#
# Gradient inversion optimises a loss that is itself built from a gradient,
# so the engine has to differentiate through its own backward pass.

# %%
import numpy as np

from smelab import autodiff as ad, models

# %% [markdown]
# Plain first-order gradients, checked against central differences.

# %%
x = ad.tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
y = ad.sum(ad.tanh(x) * x)
print("autodiff :", ad.grad(y, x))
print("finite   :", ad.finite_difference_gradient(
    lambda v: float(np.sum(np.tanh(v) * v)), x.numpy()))

# %% [markdown]
# Double backward: take the weight gradient of a tiny MLP with
# `create_graph=True`, turn it into a scalar and differentiate that with
# respect to the *input image*.

# %%
spec = models.mlp(input_shape=(1, 4, 4), classes=3, hidden=(6,), activation="tanh")
w = models.init_weights(spec, seed=1)
rng = np.random.default_rng(0)
img = ad.tensor(rng.uniform(size=(2, 1, 4, 4)), requires_grad=True)
labels = [0, 2]

gw = models.grad_weights(spec, w.values, img, labels, create_graph=True)
score = ad.l2_norm(gw)
d_img = ad.grad(score, img)

fd = ad.finite_difference_gradient(
    lambda v: float(np.linalg.norm(models.grad_weights(spec, w.values, v, labels).values)),
    img.numpy())
print("relative error of d||grad_w|| / d image:",
      np.linalg.norm(d_img - fd) / np.linalg.norm(fd))
