# %% [markdown]
# # From an s-minimal graph to its flatness report
#
# Solve for a graph of vanishing nonlocal curvature with sinusoidal data
# outside the unit interval, then measure how quickly its boundary flattens
# in dyadic balls and run the Harnack dichotomy with the calibrated delta.

# %%
import numpy as np

from fracflat.flatness import dyadic_flatness_report, frac_laplacian_graph, harnack_dichotomy_check
from fracflat.harness.calibration import load_calibration
from fracflat.solver import solve_minimal_graph

s = 0.5
state, report = solve_minimal_graph({"family": "sinusoidal", "amplitude": 0.05, "frequency": 2.0}, s,
                                    tol=1e-3, h=1 / 16)
print(f"converged={report.converged} after {report.iterations} steps, residual {report.residual:.2e}")

# %%
xs = np.linspace(-1, 1, 4001)
pts = np.stack([xs, state.function()(xs)], axis=1)
base = pts[len(xs) // 2]
fr = dyadic_flatness_report(pts, base, 4, 0.5 * s, r=0.5)
for l, w in zip(fr.scales, fr.widths):
    print(f"l={l}  width {w:.3e}")
print("alpha_fit:", fr.alpha_fit, " drift within bound:", fr.drift_ok)

# %%
cal = load_calibration()
for k in range(cal["k0"] + 1):
    out = harnack_dichotomy_check(pts, cal["delta_harnack"], k, 0.5 * s, 0.5, normals=fr.directions,
                                  base_point=base)
    print(f"k={k}: {out.branch}")

# %% [markdown]
# Blow-ups of flat minimal boundaries solve ``L^{(1+s)/2} f = 0``.  Affine
# functions do, quadratics do not.

# %%
order = (1 + s) / 2
print("affine:", frac_laplacian_graph(lambda z: 0.7 * z - 0.2, order, 0.4, growth=(0.2, 2.0)))
print("quadratic on (-1, 1):", frac_laplacian_graph(lambda z: z ** 2, order, 0.0, R=1.0))
