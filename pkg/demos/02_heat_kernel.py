# %% [markdown]
# # Heat kernels of a variable metric
#
# A Crank-Nicolson solve of the heat equation for ``g(x) = 1 + 0.4 sin x`` on
# the line, compared with the frozen-coefficient kernel ``H_y``.  The
# difference is computed twice: by subtraction and by Duhamel's formula.

# %%
import numpy as np

from fracflat.heat import (SolvePlan, direct_difference, duhamel_difference, gaussian_bound_fit, l1_norm,
                           solve_heat)
from fracflat.metric import diagonal_sinusoidal, euclidean

metric = diagonal_sinusoidal(1, 0.4)
field = solve_heat(metric, SolvePlan(h=1 / 128, tau=1 / 1024), 0.1, [0.3])
print("mass at t = 0.1:", field.mass)
print("largest mass along the run:", max(m for _, m in field.mass_history))

# %% [markdown]
# ``H - H_y`` grows like ``sqrt(t)`` in L1 for small times.

# %%
plan = SolvePlan(h=1 / 256, tau=1 / 1024)
for t in (0.0025, 0.01, 0.04, 0.1):
    grid, w = duhamel_difference(metric, [0.3], plan, t)
    print(f"t={t:<7} |H - H_y|_1 = {l1_norm(grid, w):.5f}")
_, d = direct_difference(metric, [0.3], plan, 0.1, box=(grid.lo, grid.hi))
print("Duhamel vs subtraction, relative L1 gap:", l1_norm(grid, w - d) / l1_norm(grid, d))

# %% [markdown]
# Fitting ``C t^{-n/2} exp(-c d^2 / t)`` to Euclidean solves recovers
# ``C = (4 pi)^{-1/2}`` and ``c = 1/4``.

# %%
fields = [solve_heat(euclidean(1), SolvePlan(h=1 / 128, tau=t / 64), t, [0.0]) for t in (0.05, 0.1, 0.2, 0.4)]
fit = gaussian_bound_fit(fields)
print(f"C = {fit.C:.4f} (exact {(4 * np.pi) ** -0.5:.4f}), c = {fit.c:.4f}")
