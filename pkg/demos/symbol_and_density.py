#!/usr/bin/env python
"""
Characteristic exponent, transition density and the heat semigroup.

Evaluates the exponent of the truncated stable process at a few frequencies,
builds the transition density by FFT inversion and checks its mass and the
semigroup law P_t P_s = P_{t+s} on a smooth test function.
"""

import numpy as np

from levyzvonkin import Box, GridFunction, LevyModel, build_density
from levyzvonkin.density import chapman_kolmogorov_error
from levyzvonkin.levy_model import eval_psi
from levyzvonkin.semigroup import apply_semigroup


def main():
    model = LevyModel(d=1, alpha=1.8)
    box = Box(1, 8.0, 4096)

    print("=" * 60)
    print(f"Truncated stable exponent, alpha = {model.alpha}")
    print("=" * 60)
    print(f"{'u':>10} {'Psi(u)':>14} {'Psi(u)/|u|^alpha':>20}")
    for u in (0.1, 1.0, 10.0, 100.0, 1000.0):
        psi = eval_psi(model, u)
        print(f"{u:>10g} {psi:>14.6g} {psi / u ** model.alpha:>20.6g}")

    print("\nTransition density")
    print(f"{'t':>6} {'mass-1':>12} {'p(0)':>10} {'CK error':>10}")
    for t in (0.05, 0.1, 0.25):
        dens = build_density(model, t, box)
        ck = chapman_kolmogorov_error(model, t, box)
        print(f"{t:>6g} {dens.mass() - 1:>12.2e} {dens.values[box.n // 2]:>10.4f} {ck:>10.2e}")

    # semigroup law on tanh: one step of 0.3 against two steps 0.1 + 0.2
    phi = GridFunction.from_callable(box, np.tanh)
    once = apply_semigroup(model, 0.3, phi)
    twice = apply_semigroup(model, 0.1, apply_semigroup(model, 0.2, phi))
    inner = box.interior_mask(2.0)
    gap = np.max(np.abs(once.values - twice.values)[inner])
    print(f"\nsemigroup law gap on tanh: {gap:.2e}")


if __name__ == "__main__":
    main()
