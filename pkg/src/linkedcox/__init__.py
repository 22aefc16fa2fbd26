"""Cox regression for clinical trials whose follow-up is extended by
incompletely linked observational records.

The main entry points are the estimator pipelines in
:mod:`linkedcox.estimators`, the data generators in :mod:`linkedcox.simgen`
and the replication runner in :mod:`linkedcox.montecarlo`.
"""

from .coxfit import CoxFit, newton_solve
from .dataset import ChangePointSpec, Cohort, SubjectRecord, load_csv, read_cohort, save_csv, split_episodes
from .errors import (DegenerateScenario, EmptyRiskSet, InvalidInput, LinkedCoxError, NoConvergence,
                     ParseError, SeparationDetected, SingularDesign, SingularHessian, SingularLinkageInfo)
from .estimators import FitReport, Method, fit_cc, fit_ccplus, fit_iplw, fit_method, fit_nlac, fit_oracle
from .linkage import LinkageFit, PositivityWarning, compute_weights, fit_linkage
from .montecarlo import SimReport, TargetEstimate, emit_table, estimate_target, run_replications
from .simgen import Analysis, GapMode, Mechanism, Scenario, ScenarioConfig, simulate

__version__ = "0.1.0"

__all__ = [
    "Analysis", "ChangePointSpec", "Cohort", "CoxFit", "DegenerateScenario", "EmptyRiskSet",
    "FitReport", "GapMode", "InvalidInput", "LinkageFit", "LinkedCoxError", "Mechanism", "Method",
    "NoConvergence", "ParseError", "PositivityWarning", "Scenario", "ScenarioConfig",
    "SeparationDetected", "SimReport", "SingularDesign", "SingularHessian", "SingularLinkageInfo",
    "SubjectRecord", "TargetEstimate", "compute_weights", "emit_table", "estimate_target",
    "fit_cc", "fit_ccplus", "fit_iplw", "fit_linkage", "fit_method", "fit_nlac", "fit_oracle",
    "load_csv", "newton_solve", "read_cohort", "run_replications", "save_csv", "simulate",
    "split_episodes",
]
