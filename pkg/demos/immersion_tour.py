"""Cox time vs. honest time on a coin tree.

Builds both models exactly, prints the Azema supermartingale along one path
and runs every immersion check.  The Cox time keeps F-martingales as
G-martingales; the argmax time sees the future and breaks all four checks.
"""

from fractions import Fraction

from defaulttimes.enlarge import azema_bundle
from defaulttimes.hypotest import check_H, hypothesis_report
from defaulttimes.scenarios import argmax_walk_model, coin_space, constant_cox_model


def show(label, model):
    b = azema_bundle(model)
    rep = hypothesis_report(model)
    print(f"== {label}: {model.n} scenarios, K = {model.K}")
    print("   Z along scenario 0:", [str(v) for v in b.Z[0]])
    print("   hazard increments:  ", [str(v) for v in b.dLambda[0]])
    print("   immersion checks:   ", rep.h_verdicts)
    print("   worst violations:   ", [f"{v:.4g}" for v in rep.h_violations])
    print("   pseudo-stopping:    ", rep.pseudo_stopping, f"(gap {rep.pseudo_stopping_violation:.4g})")
    print("   F_K-measurable:     ", rep.f_infty_measurable, " stopping time:", rep.is_stopping_time)
    print()


if __name__ == "__main__":
    cox = constant_cox_model(coin_space(3, exact=True), Fraction(1, 10))
    show("Cox time, hazard 1/10", cox)
    honest = argmax_walk_model(3)
    show("argmax of a three-step walk", honest)
    assert check_H(cox).holds and not check_H(honest).holds
