"""How fast the discrete quantities approach their continuous closed forms.

Prints error against dt for the hazard process, the Q-survival and the two
representation residuals on the constant and stochastic hazard families.
"""

from defaulttimes.refinement import (
    CONSTANT_HAZARD,
    STOCHASTIC_HAZARD,
    gamma_error,
    refinement_harness,
    representation_error,
    zq_error,
)

METRICS = {
    "Gamma vs int lambda": gamma_error,
    "Z^Q vs exp form": zq_error,
    "z_tau residual": representation_error,
    "F z_tau residual": lambda fam, K: representation_error(fam, K, general=True),
}

for fname, fam in (("constant", CONSTANT_HAZARD), ("stochastic", STOCHASTIC_HAZARD)):
    print(f"-- {fname} hazard")
    for label, fn in METRICS.items():
        tab = refinement_harness(lambda K: fn(fam, K))
        errs = "  ".join(f"{e:.2e}" for e in tab.errors)
        print(f"   {label:22s} {errs}   order {tab.order:.3f}")
