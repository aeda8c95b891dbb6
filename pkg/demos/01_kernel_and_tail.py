# %% [markdown]
# # The fractional kernel of a frozen metric
#
# For a constant metric the kernel obtained by integrating the heat kernel
# against ``t^{-1-s/2}`` has a closed form.  This script compares it with
# direct time quadrature and checks the tail integral outside a ball.

# %%
import numpy as np

from fracflat.harness.run import kernel_quadrature
from fracflat.kernel import Cns, kernel_constant, tail_integral_constant

g = np.array([[1.3, 0.2], [0.2, 0.8]])
x, y = np.array([0.4, -0.1]), np.array([0.0, 0.2])
for s in (0.3, 0.5, 0.7):
    closed = kernel_constant(g, x, y, s)
    quad = kernel_quadrature(g, x, y, s)
    print(f"s={s}: closed {closed:.12f}  quadrature {quad:.12f}  rel {abs(closed - quad) / quad:.1e}")

# %% [markdown]
# The normalising constant on the line at ``s = 1/2``:

# %%
print("C_{1,1/2} =", Cns(1, 0.5).value)

# %% [markdown]
# Outside ``B_r(y)`` the kernel mass decays like ``r^{-s}``; halving the
# radius multiplies it by ``2^s``.

# %%
rs = np.array([1.0, 0.5, 0.25, 0.125])
tails = np.array([tail_integral_constant(np.zeros(2), r, 0.5, g) for r in rs])
print("tail values:", np.round(tails, 6))
print("log-log slope:", np.polyfit(np.log(rs), np.log(tails), 1)[0])
