"""Critical points of the residual loss: when is zero residual forced?

The first variation of the discrete residual loss pairs each residual w_n
with Jacobians of the scheme's implicit/explicit maps; setting it to zero
gives a backward recurrence that transports the terminal condition w_N = 0
through the grid.  When every transport matrix is invertible, a critical
point must have all residuals zero -- for explicit schemes always, for
implicit ones only away from resonant step sizes.

This script checks the variation identity numerically for every scheme,
exhibits the implicit-Euler resonance at h = 1/lambda, and scans the
midpoint margins |1 + (h/2) lambda_i| on the harmonic oscillator.

Run time: a few seconds.
"""

import numpy as np

from hamflow import LinearSystem, make_scheme, make_system
from hamflow.adjoint import (
    backward_transport,
    first_variation_check,
    midpoint_condition_scan,
    residual_sequence,
)
from hamflow.flowmap import TaylorFlowMap

system = make_system("npco", {"eps": 0.1})
flow_map = TaylorFlowMap(4, order=1, hidden=(12, 12), seed=0)
rng = np.random.default_rng(1)
for name, tensor in flow_map.params.items():
    tensor.value = np.asarray(0.3 * rng.standard_normal(tensor.value.shape))

u = 0.5 * rng.standard_normal(4)
h = 0.1
grid = h * np.arange(6)
direction = rng.standard_normal(4)

print("first-variation identity, all schemes (gap should be ~1e-8 or below):")
for name in ("fe", "vv", "rk4", "implicit_euler", "midpoint"):
    scheme = make_scheme(name, h=h)
    lhs, rhs, gap = first_variation_check(
        flow_map, scheme, system, u, grid, lambda uu, tt: tt * direction, h=h
    )
    print(f"  {name:15s} lhs={lhs:+.6e}  rhs={rhs:+.6e}  gap={gap:.2e}")

print("\nimplicit Euler on u' = 3u: transport solvability vs step size")
scalar = LinearSystem([[3.0]])
exact = lambda uu, tt: uu * np.exp(3.0 * tt)
for h_s in (0.05, 1.0 / 3.0):
    grid_s = h_s * np.arange(4)
    chain = residual_sequence(exact, make_scheme("implicit_euler"), scalar,
                              np.array([1.0]), grid_s, h=h_s)
    result = backward_transport(chain, make_scheme("implicit_euler"), scalar, h=h_s)
    verdict = "forces all residuals to zero" if result.forces_zero else (
        f"SINGULAR at steps {result.singular_steps} (1 - h lambda = 0)")
    print(f"  h = {h_s:.4f}: {verdict}")

print("\nmidpoint margins on the harmonic oscillator (closed form sqrt(1 + h^2/4)):")
harmonic = make_system("harmonic")
rotation = lambda uu, tt: np.array([
    uu[0] * np.cos(tt) - uu[1] * np.sin(tt),
    uu[1] * np.cos(tt) + uu[0] * np.sin(tt),
])
for h_m in (0.25, 1.0, 2.0):
    scan = midpoint_condition_scan(rotation, harmonic, np.array([[0.0, 1.0]]),
                                   h_m * np.arange(4), h_m)
    print(f"  h = {h_m:4.2f}: min margin {scan.min_margin:.6f} "
          f"(closed form {np.sqrt(1 + h_m ** 2 / 4):.6f})")

print("\nscalar decay u' = -u at h = 2: the midpoint margin vanishes")
decay = LinearSystem([[-1.0]])
scan = midpoint_condition_scan(lambda uu, tt: uu * np.exp(-tt), decay,
                               np.array([[1.0]]), 2.0 * np.arange(3), 2.0)
print(f"  min margin {scan.min_margin:.2e} -> degenerate = {scan.degenerate}")
