"""Interventional indirect, direct and total effects with EIF-difference inference."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional


from .core import Contrast, Dataset, EstimateReport
from .dgp import true_theta
from .estimators import CrossFit, estimate
from .inference import make_report
from .learners import NuisanceConfig, OracleSource

DECOMPOSITION = (Contrast(1, 1), Contrast(1, 0), Contrast(0, 0))
EFFECTS = ("indirect", "direct", "total")


@dataclass
class EffectReport:
    """Effect estimates on the difference scale plus the underlying contrast reports.

    ``indirect = theta(1,1) - theta(1,0)`` and ``direct = theta(1,0) - theta(0,0)``.
    ``total`` is stored as their sum so the decomposition is exact in floating point.
    """

    indirect: EstimateReport
    direct: EstimateReport
    total: EstimateReport
    thetas: Dict[Contrast, EstimateReport]

    def __getitem__(self, name: str) -> EstimateReport:
        if name not in EFFECTS:
            raise KeyError(name)
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {
            **{name: self[name].to_dict() for name in EFFECTS},
            "thetas": {str(c): r.to_dict() for c, r in self.thetas.items()},
        }


def difference_report(first: EstimateReport, second: EstimateReport, theta_hat: Optional[float] = None) -> EstimateReport:
    """Report for ``first - second``; variance from the per-observation EIF differences."""
    if first.eif is None or second.eif is None:
        raise ValueError("both reports must carry per-observation EIF values")
    if first.n != second.n:
        raise ValueError("reports come from different samples")
    theta = first.theta_hat - second.theta_hat if theta_hat is None else theta_hat
    return make_report(theta, first.eif - second.eif, first.estimator)


def decompose_effects(
    data: Dataset,
    cfg: NuisanceConfig,
    estimator: str = "onestep",
    seed: int = 0,
    oracle: OracleSource = None,
    fits: Optional[CrossFit] = None,
) -> EffectReport:
    """Estimate ``theta(1,1)``, ``theta(1,0)``, ``theta(0,0)`` on shared folds and combine them."""
    if fits is None:
        fits = CrossFit.fit(data, cfg, seed, oracle)
    thetas = {c: estimate(estimator, data, cfg, c, seed, oracle, fits) for c in DECOMPOSITION}
    t11, t10, t00 = (thetas[c] for c in DECOMPOSITION)
    indirect = difference_report(t11, t10)
    direct = difference_report(t10, t00)
    total = make_report(
        indirect.theta_hat + direct.theta_hat, indirect.eif + direct.eif, estimator
    )
    return EffectReport(indirect=indirect, direct=direct, total=total, thetas=thetas)


def true_effects(spec) -> Dict[str, float]:
    """Oracle indirect, direct and total effects for a :class:`~intmed.dgp.DgpSpec`."""
    t11, t10, t00 = (true_theta(spec, c) for c in DECOMPOSITION)
    indirect, direct = t11 - t10, t10 - t00
    return {"indirect": indirect, "direct": direct, "total": indirect + direct}
