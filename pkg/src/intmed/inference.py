"""Wald intervals and report assembly from per-observation influence values."""

from __future__ import annotations

from typing import Dict, Iterable, Tuple

import numpy as np
from scipy.special import ndtri

from .core import BadAlpha, EstimateReport
from .eif import eif_variance

LEVELS = (0.95, 0.99)


def normal_quantile(p: float) -> float:
    return float(ndtri(p))


def wald_ci(theta_hat: float, sigma2: float, n: int, alpha: float) -> Tuple[float, float]:
    """``theta_hat -/+ z_{1 - alpha/2} * sqrt(sigma2 / n)``."""
    if not 0.0 < alpha < 1.0:
        raise BadAlpha(f"alpha must lie in (0, 1), got {alpha}")
    if n < 1:
        raise ValueError("n must be positive")
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    half = normal_quantile(1.0 - alpha / 2.0) * np.sqrt(sigma2 / n)
    return float(theta_hat - half), float(theta_hat + half)


def make_report(
    theta_hat: float,
    eif: np.ndarray,
    estimator: str,
    diagnostics: Dict[str, object] = None,
    levels: Iterable[float] = LEVELS,
) -> EstimateReport:
    eif = np.asarray(eif, dtype=float)
    n = eif.shape[0]
    sigma2 = eif_variance(eif)
    ci = {lvl: wald_ci(theta_hat, sigma2, n, 1.0 - lvl) for lvl in levels}
    return EstimateReport(
        theta_hat=float(theta_hat),
        sigma2_hat=sigma2,
        n=n,
        ci=ci,
        estimator=estimator,
        diagnostics=dict(diagnostics or {}),
        eif=eif,
    )
