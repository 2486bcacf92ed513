#!/usr/bin/env python3
"""Three customers, three price levels: IPS vs kernelized IPS by hand.

Customers with identical features were offered 10%, 20% and 30% loadings
uniformly at random and paid 90, 0 and 70. IPS uses exact matches only; the
kernel spreads each observation across neighbouring levels along a fitted line.
"""
import numpy as np

from pricing_ope.core import ActionSpace, LearningSample, constant_policy
from pricing_ope.estimators import ips_value, kips_value
from pricing_ope.kernel import LINEAR_BASIS, build_design, naive_kernels

levels = ActionSpace((0.1, 0.2, 0.3))
sample = LearningSample(np.zeros((3, 1)), [0, 1, 2], [90.0, 0.0, 70.0], np.full((3, 3), 1 / 3), levels)
kernels = naive_kernels(sample, build_design(LINEAR_BASIS, levels, levels))

np.set_printoptions(precision=3, suppress=True)
print("kernel matrix K:\n", kernels.matrices[0])
for k, a in enumerate(levels.values):
    pol = constant_policy(k, 3)
    print(f"always {a:.0%}:  IPS {ips_value(sample, pol).value:7.3f}   KIPS {kips_value(sample, pol, kernels).value:7.3f}")
print("with K rounded to 3 decimals, KIPS(10%) =",
      round(float(90 * 3 * 0.833 / 3 + 0 + 70 * 3 * -0.167 / 3), 3))
