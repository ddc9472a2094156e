"""Exact-rational toolkit for metric facility location and k-median.

Everything downstream of instance generation works over `fractions.Fraction`,
so certificates, traces and reports are reproducible bit for bit.  The
package splits into: metric instances and normalization (`metric`),
brute-force optima and certificate checking (`oracle`), an exact rational
feasibility solver (`lp`), the continuous greedy dual process (`greedy`),
the phase-based variant with editable execution traces (`logadaptive`),
trace surgery that walks between facility budgets (`merge`), coverage-style
submodular maximization (`submodular`), the stability pipeline (`stable`)
and a command line front end (`cli`).
"""

from .metric import (
    INF,
    FacilityRef,
    MetricInstance,
    ParamSet,
    free_copy,
    make_instance,
    make_params,
    regular,
)
from .oracle import brute_force_kmedian, brute_force_ufl, cost, ufl_cost
from .greedy import run_greedy
from .logadaptive import run_log_adaptive
from .merge import PseudoSolution, run_pseudo_approx
from .stable import OracleGuesses, SearchCaps, StableSolution, run_main, run_stable

__all__ = [
    "INF",
    "FacilityRef",
    "MetricInstance",
    "ParamSet",
    "free_copy",
    "make_instance",
    "make_params",
    "regular",
    "brute_force_kmedian",
    "brute_force_ufl",
    "cost",
    "ufl_cost",
    "run_greedy",
    "run_log_adaptive",
    "PseudoSolution",
    "run_pseudo_approx",
    "OracleGuesses",
    "SearchCaps",
    "StableSolution",
    "run_main",
    "run_stable",
]
