"""Efficient one-step and targeted estimators of interventional (in)direct effects."""

from .core import Contrast, Dataset, EstimateReport, MediationError, NuisanceBundle
from .dgp import DgpSpec, efficiency_bound, oracle_nuisances, sample_dataset, true_theta
from .effects import EffectReport, decompose_effects, true_effects
from .estimators import ESTIMATORS, estimate, estimate_onestep, estimate_plugin, estimate_tmle
from .learners import LearnerSpec, NuisanceConfig

__version__ = "0.1.0"
