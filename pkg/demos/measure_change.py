"""Changing measure without losing immersion.

An FH density (terminal factor times a pre-default factor with unit
conditional mean) keeps immersion and factorizes back exactly.  A generic
density that ties early defaults to the terminal driver breaks it, and the Jeulin-Yor condition
flags the same thing.  Finally an exponential density with hazard loading H
rescales the Q-hazard to dLambda (1 + H (1 - dLambda)).
"""

from fractions import Fraction as Q

import numpy as np

from defaulttimes.enlarge import azema_bundle
from defaulttimes.finspace import spanning_martingales
from defaulttimes.hypotest import check_H
from defaulttimes.measure import (
    azema_under_Q,
    build_density,
    build_FH_density,
    exponential_density,
    factorize_FH,
    jy_condition_check,
)
from defaulttimes.scenarios import coin_space, constant_cox_model

model = constant_cox_model(coin_space(3, exact=True), Q(1, 5))
x = model.space.driver[:, -1]
F = np.array([1 + Q(int(v), 8) for v in x], dtype=object)
F = F / model.space.expect(F)
z = np.zeros((model.n, model.K + 1), dtype=object)
z[:, 1:] = Q(3, 4)

fh = build_FH_density(model, F, z)
fac = factorize_FH(fh)
print("FH density: immersion under Q =", check_H(fh.q_model).holds)
print("   factorization gap =", fac.product_gap, " JY condition =", jy_condition_check(fh)[0])

# favour early defaults on scenarios that end up high
rho = np.array([Q(2) if t == 1 and v > 0 else Q(1) for t, v in zip(model.tau_index, x)], dtype=object)
tilt = build_density(model, rho / model.space.expect(rho))
print("early-default tilt: immersion under Q =", check_H(tilt.q_model).holds,
      " JY condition =", jy_condition_check(tilt)[0])

b = azema_bundle(model)
H = np.full((model.n, model.K + 1), Q(1, 2), dtype=object)
zero = np.zeros_like(H)
m = spanning_martingales(model.F, model.weights)[:, :, 0]
qa = azema_under_Q(model, exponential_density(model, zero, H, m, b), b)
print("exponential density, H = 1/2:")
print("   P hazard per step:", b.dLambda[0, 1], " Q hazard:", qa.dLambdaQ[0, 1],
      " formula:", b.dLambda[0, 1] * (1 + Q(1, 2) * (1 - b.dLambda[0, 1])))
print("   exact compensator defect:", qa.nq_violation, " first-order defect:", f"{qa.nq_linear_violation:.3g}")
