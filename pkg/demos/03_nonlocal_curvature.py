# %% [markdown]
# # Nonlocal mean curvature and fractional perimeter
#
# Principal values on shrinking annuli, with opposite directions paired.
# For the unit disc at ``s = 1/2`` the value has a closed form through a
# Beta integral.

# %%
import math

import numpy as np

from fracflat.kernel import KernelModel, cns
from fracflat.nmc import fractional_perimeter, graph_nmc, nmc_pv
from fracflat.region import Ball, Boolean, HalfSpace
from fracflat.solver import exterior_from_config

s = 0.5
model = KernelModel.constant(np.eye(2), s)
disc = nmc_pv(Ball((0.0, 0.0), 1.0), [1.0, 0.0], model)
beta = math.sqrt(math.pi) * math.gamma((1 - s) / 2) / math.gamma(1 - s / 2)
print("disc:", disc.value, " closed form:", -(2 * cns(2, s) / s) * 2 ** -s * beta)
print("half-plane (paired):", nmc_pv(HalfSpace((0.6, 0.8)), [0.0, 0.0], model).value)
print("half-plane (unpaired):", nmc_pv(HalfSpace((0.6, 0.8)), [0.0, 0.0], model, route="unpaired").value)

# %% [markdown]
# Complements flip the sign, and scaling by ``lam`` multiplies by ``lam^{-s}``.

# %%
two = Boolean("union", (Ball((0.0, 0.0), 1.0), Ball((1.5, 0.0), 0.8)))
y = np.array([math.cos(2.0), math.sin(2.0)])
a = nmc_pv(two, y, model).value
print("union:", a, " complement:", nmc_pv(two.complement(), y, model).value)

# %% [markdown]
# Subgraphs have a column route: ``cos`` bumps of height ``eps`` have
# curvature close to the linearized symbol times ``cos x``.

# %%
eps = 1e-4
ext = exterior_from_config({"family": "cosine", "amplitude": eps, "frequency": 1.0})
x = np.array([0.0, 0.8])
kappa = -2 * math.gamma(-1 - s) * math.cos(math.pi * (1 + s) / 2)
print("graph route:", graph_nmc(ext, x, s, sup_abs=eps, far_tail=ext.paired_tail))
print("linearization:", -eps * 2 * cns(2, s) * kappa * np.cos(x))

# %% [markdown]
# On the line, the perimeter of ``{x < 0}`` relative to ``(-1, 1)``:

# %%
P = fractional_perimeter(HalfSpace((1.0,)), Ball((0.0,), 1.0), KernelModel.constant(np.eye(1), s))
print("perimeter:", P, " closed form:", 2 ** (2 - s) * cns(1, s) / (s * (1 - s)))
