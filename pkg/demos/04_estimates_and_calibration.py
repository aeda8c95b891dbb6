# %% [markdown]
# # Scaling estimates and their calibrated constants
#
# The estimates bound quantities by ``C r^{-s}`` with constants that are only
# known to exist.  The packaged calibration fits them for the sinusoidal
# family on the line; its sweep tables are stored with the constants.

# %%
import numpy as np

from fracflat.harness.calibration import load_calibration, sweep_value
from fracflat.kernel import dirichlet_kernel_gap
from fracflat.metric import euclidean

cal = load_calibration()
print("calibration", cal["version"])
for kind, key in (("effacement", "C_effacement"), ("measure", "C_measure"), ("dirichlet", "C_dirichlet")):
    table = cal["diagnostics"][kind]["table"]
    print(f"{kind:<11} C = {cal[key]:.3f}  slope {cal['diagnostics'][kind]['slope']:+.3f}  table {table}")
print("delta =", cal["delta_harnack"], " k0 =", cal["k0"], " drift factor =", cal["drift_factor"])

# %% [markdown]
# The Dirichlet gap (whole-space minus ball kernel) is cheap, so one sweep
# point can be recomputed here and compared with the stored table.

# %%
fam = cal["diagnostics"]["family_config"]
print("recomputed r=0.5:", sweep_value(("dirichlet", fam["metric"], fam["y"], 0.5, fam["s"])))
for r in (1.0, 0.5, 0.25):
    print(f"Euclidean gap r={r}:", dirichlet_kernel_gap(euclidean(1), [0.0], r, r / 2, 0.5)[0])
