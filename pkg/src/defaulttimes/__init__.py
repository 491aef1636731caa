"""Default times on finite filtered spaces: enlargement, immersion, measure changes, representation."""

__version__ = "0.1.0"

from .enlarge import (
    AzemaBundle,
    RandomTimeModel,
    azema_bundle,
    compensated_default_martingale,
    cox_construct,
    enlarge_progressively,
    independent_time,
    jeulin_yor_stopped_decomposition,
)
from .errors import *  # noqa: F401,F403
from .finspace import (
    Filtration,
    FiniteFilteredSpace,
    Partition,
    TimeGrid,
    cond_exp,
    doob_meyer,
    is_martingale,
    natural_filtration,
)
from .hypotest import arbitrage_equivalence_suite, check_H, check_pseudo_stopping, hypothesis_report
from .measure import (
    azema_under_Q,
    build_density,
    build_FH_density,
    exponential_density,
    factorize_FH,
    girsanov_transfer,
    jy_condition_check,
)
from .represent import projection_formula, represent_general, represent_z_tau, value_defaultable
