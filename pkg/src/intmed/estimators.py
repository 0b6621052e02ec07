"""Cross-fitted one-step, targeted minimum loss, and plug-in estimators of ``theta(a', a*)``."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logit

from .core import (
    Contrast,
    Dataset,
    EstimateReport,
    FoldAssignment,
    NuisanceBundle,
    TiltNonConvergence,
    TooFewObservations,
)
from .eif import eif_scores, mediator_pseudo_outcome, outcome_weight, stabilize
from .inference import make_report
from .learners import (
    NuisanceConfig,
    OracleSource,
    _oracle_for,
    fit_base_nuisances,
    fit_contrast_nuisances,
    fit_logistic_irls,
    fit_v_fold,
    make_folds,
)

ESTIMATORS = ("onestep", "onestep_stabilized", "tmle", "plugin")


@dataclass
class CrossFit:
    """Fold assignment plus fitted nuisances, shared across contrasts and estimators.

    The contrast-free components ``b, g, h, q, r`` are fitted once per fold;
    ``u`` and ``v`` are fitted lazily per contrast.
    """

    data: Dataset
    folds: FoldAssignment
    cfg: NuisanceConfig
    seed: int
    oracle: OracleSource = None
    base: List[NuisanceBundle] = field(default_factory=list)
    _bundles: Dict[Contrast, List[NuisanceBundle]] = field(default_factory=dict, repr=False)

    @classmethod
    def fit(cls, data: Dataset, cfg: NuisanceConfig, seed: int = 0, oracle: OracleSource = None) -> "CrossFit":
        if data.n < 2 * cfg.folds:
            raise TooFewObservations(f"need n >= 2J = {2 * cfg.folds}, got n = {data.n}")
        folds = make_folds(data.n, cfg.folds, seed)
        base = fit_base_nuisances(data, folds, cfg, oracle)
        return cls(data=data, folds=folds, cfg=cfg, seed=seed, oracle=oracle, base=base)

    def bundles(self, contrast: Contrast) -> List[NuisanceBundle]:
        if contrast not in self._bundles:
            self._bundles[contrast] = fit_contrast_nuisances(
                self.data, self.folds, self.base, self.cfg, contrast, self.oracle
            )
        return self._bundles[contrast]


def _resolve(data, cfg, seed, oracle, fits) -> CrossFit:
    if fits is not None:
        return fits
    return CrossFit.fit(data, cfg, seed, oracle)


def _diagnostics(fits: CrossFit, **extra) -> Dict[str, object]:
    return {"folds": fits.folds.J, "seed": fits.seed, **extra}


def estimate_onestep(
    data: Dataset,
    cfg: NuisanceConfig,
    contrast: Contrast,
    seed: int = 0,
    stabilized: bool = False,
    oracle: OracleSource = None,
    fits: Optional[CrossFit] = None,
    c_star: Literal["plain", "stripped"] = "plain",
) -> EstimateReport:
    """Sample mean of the cross-fitted EIF, optionally with stabilized weights."""
    fits = _resolve(data, cfg, seed, oracle, fits)
    bundles = fits.bundles(contrast)
    scores = eif_scores(fits.data, bundles, fits.folds, contrast)
    if stabilized:
        scores = stabilize(scores, fits.data, bundles, fits.folds, contrast, c_star)
    d = scores.d
    name = "onestep_stabilized" if stabilized else "onestep"
    return make_report(float(d.mean()), d, name, _diagnostics(fits, iterations=0, converged=True))


def estimate_plugin(
    data: Dataset,
    cfg: NuisanceConfig,
    contrast: Contrast,
    seed: int = 0,
    oracle: OracleSource = None,
    fits: Optional[CrossFit] = None,
) -> EstimateReport:
    """Untargeted substitution estimator ``mean_i v_{j(i)}(a*, W_i)``.

    The reported variance is that of the EIF at the initial fits; it is given
    for reference and does not make the interval valid for this estimator.
    """
    fits = _resolve(data, cfg, seed, oracle, fits)
    bundles = fits.bundles(contrast)
    scores = eif_scores(fits.data, bundles, fits.folds, contrast)
    theta = float(scores.v_at_astar.mean())
    return make_report(theta, scores.d, "plugin", _diagnostics(fits, iterations=0, ci_valid=False))


# -- targeted minimum loss --------------------------------------------------------


@dataclass
class TiltingState:
    beta_y: float = 0.0
    beta_z: float = 0.0
    beta_m: float = 0.0
    iteration: int = 0
    score_residuals: Tuple[float, float, float] = (np.nan, np.nan, np.nan)
    score_tolerances: Tuple[float, float, float] = (np.nan, np.nan, np.nan)
    converged: bool = False


def _logit(p):
    return logit(np.clip(p, 1e-15, 1 - 1e-15))


class _ConfounderScoreCovariate:
    """``Hz(a, w) = 1{a=a'} {u(1,a',w) - u(0,a',w)} / g(a'|w)``."""

    def __init__(self, bundle: NuisanceBundle, contrast: Contrast):
        self.bundle = bundle
        self.ap = contrast.a_prime

    def __call__(self, a, w):
        bd, ap = self.bundle, self.ap
        return (np.asarray(a) == ap) / bd.g(ap, w) * (bd.u(1, ap, w) - bd.u(0, ap, w))


class _TiltedConfounder:
    """``logit q_beta(1 | a, w) = logit q(1 | a, w) + beta Hz(a, w)``."""

    def __init__(self, q0, hz: _ConfounderScoreCovariate, beta: float):
        self.q0, self.hz, self.beta = q0, hz, beta

    def __call__(self, z, a, w):
        p1 = expit(_logit(self.q0(1, a, w)) + self.beta * self.hz(a, w))
        return np.where(np.asarray(z) == 1, p1, 1.0 - p1)


class _OutcomeScoreCovariate:
    """``Hy(a, z, m, w) = 1{a=a'} * outcome weight`` evaluated at a frozen bundle."""

    def __init__(self, bundle: NuisanceBundle, contrast: Contrast, form: str):
        self.bundle, self.contrast, self.form = bundle, contrast, form

    def __call__(self, a, z, m, w):
        ind = np.asarray(a) == self.contrast.a_prime
        return ind * outcome_weight(self.bundle, self.contrast, z, m, w, self.form)


class _TiltedOutcome:
    """``logit b = logit b0 + sum_k beta_k Hy_k`` over the targeting sweeps so far."""

    def __init__(self, b0, steps: Sequence[Tuple[float, _OutcomeScoreCovariate]] = ()):
        self.b0 = b0
        self.steps = tuple(steps)

    def extend(self, beta: float, hy: _OutcomeScoreCovariate) -> "_TiltedOutcome":
        return _TiltedOutcome(self.b0, self.steps + ((beta, hy),))

    def __call__(self, a, z, m, w):
        eta = _logit(self.b0(a, z, m, w))
        for beta, hy in self.steps:
            eta = eta + beta * hy(a, z, m, w)
        return expit(eta)


class _TiltedMediator:
    """``logit v_beta(a, w) = logit v(a, w) + beta 1{a=a*} / g(a*|w)``."""

    def __init__(self, v0, g, a_star: int, beta: float):
        self.v0, self.g, self.a_star, self.beta = v0, g, a_star, beta

    def __call__(self, a, w):
        hm = (np.asarray(a) == self.a_star) / self.g(self.a_star, w)
        return expit(_logit(self.v0(a, w)) + self.beta * hm)


def _score_check(score: np.ndarray, n: int) -> Tuple[float, float]:
    """Mean of a score and its stopping tolerance ``sd / (sqrt(n) log n)``."""
    tol = float(np.std(score)) / (np.sqrt(n) * np.log(n))
    return float(np.mean(score)), max(tol, 1e-12)


def _tilt(outcome, covariate, offset) -> float:
    """One-parameter offset logistic fit without intercept; rows with zero covariate dropped."""
    keep = covariate != 0
    if not np.any(keep):
        return 0.0
    fit = fit_logistic_irls(covariate[keep][:, None], outcome[keep], offset=offset[keep])
    return float(fit.coef[0])


def tmle_fit(
    data: Dataset,
    cfg: NuisanceConfig,
    contrast: Contrast,
    seed: int = 0,
    oracle: OracleSource = None,
    fits: Optional[CrossFit] = None,
    max_sweeps: int = 10,
    outcome_form: Literal["score", "printed"] = "score",
) -> EstimateReport:
    """Run the targeting loop; return the report and the per-fold tilted bundles."""
    fits = _resolve(data, cfg, seed, oracle, fits)
    data, folds = fits.data, fits.folds
    n = data.n
    ap, ast = contrast.a_prime, contrast.a_star
    initial = fits.bundles(contrast)
    J = folds.J
    rows = [folds.validation(j) for j in range(J)]
    a, z, m, w, y = data.a, data.z, data.m, data.w, data.y

    hz_fns = [_ConfounderScoreCovariate(initial[j], contrast) for j in range(J)]
    outcomes = [_TiltedOutcome(initial[j].b) for j in range(J)]
    beta_z_total = 0.0
    state = TiltingState()

    def current(j: int) -> NuisanceBundle:
        q = _TiltedConfounder(initial[j].q, hz_fns[j], beta_z_total)
        return replace(initial[j], b=outcomes[j], q=q)

    def gather(fn):
        out = np.empty(n)
        for j in range(J):
            out[rows[j]] = fn(j, rows[j])
        return out

    # Steps 2-4: alternate tilts of b and q until both scores are solved
    while True:
        bundles = [current(j) for j in range(J)]
        hy = gather(lambda j, r: (a[r] == ap) * outcome_weight(bundles[j], contrast, z[r], m[r], w[r], outcome_form))
        b_obs = gather(lambda j, r: bundles[j].b(a[r], z[r], m[r], w[r]))
        hz = gather(lambda j, r: hz_fns[j](a[r], w[r]))
        q_obs = gather(lambda j, r: bundles[j].q(1, a[r], w[r]))
        res_y, tol_y = _score_check(hy * (y - b_obs), n)
        res_z, tol_z = _score_check(hz * (z - q_obs), n)
        if abs(res_y) <= tol_y and abs(res_z) <= tol_z:
            state.converged = True
            break
        if state.iteration >= max_sweeps:
            break
        beta_y = _tilt(y, hy, _logit(b_obs))
        beta_z = _tilt(z.astype(float), hz, _logit(q_obs))
        for j in range(J):
            snapshot = _OutcomeScoreCovariate(bundles[j], contrast, outcome_form)
            outcomes[j] = outcomes[j].extend(beta_y, snapshot)
        beta_z_total += beta_z
        state.beta_y += beta_y
        state.beta_z = beta_z_total
        state.iteration += 1

    if not state.converged:
        warnings.warn(
            f"targeting did not solve the score equations in {max_sweeps} sweeps",
            TiltNonConvergence,
            stacklevel=2,
        )
    bundles = [current(j) for j in range(J)]

    # Step 5: pseudo-outcome and cross-fitted regression for v
    ob = _oracle_for(fits.oracle, contrast)
    v_fits = []
    for j in range(J):
        tr = folds.training(j)
        pseudo = mediator_pseudo_outcome(bundles[j], contrast, m[tr], w[tr])
        v_fits.append(
            fit_v_fold(data, tr, pseudo, fits.cfg.v, fits.cfg.eps, None if ob is None else ob.v, fold=j)
        )
    y_tilde = gather(lambda j, r: mediator_pseudo_outcome(bundles[j], contrast, m[r], w[r]))
    hm = gather(lambda j, r: (a[r] == ast) / bundles[j].g(ast, w[r]))
    v_obs = gather(lambda j, r: v_fits[j](a[r], w[r]))

    # Step 6: tilt v and substitute
    state.beta_m = _tilt(y_tilde, hm, _logit(v_obs))
    final = [
        replace(bundles[j], v=_TiltedMediator(v_fits[j], bundles[j].g, ast, state.beta_m))
        for j in range(J)
    ]
    v_astar = gather(lambda j, r: final[j].v(ast, w[r]))
    theta = float(v_astar.mean())

    scores = eif_scores(data, final, folds, contrast)
    checks = [_score_check(s, n) for s in (scores.term_y, scores.term_z, scores.term_m)]
    state.score_residuals = tuple(c[0] for c in checks)
    state.score_tolerances = tuple(c[1] for c in checks)

    diag = _diagnostics(
        fits,
        iterations=state.iteration,
        converged=state.converged,
        score_residuals=list(state.score_residuals),
        score_tolerances=list(state.score_tolerances),
        beta=[state.beta_y, state.beta_z, state.beta_m],
    )
    return make_report(theta, scores.d, "tmle", diag), final


def estimate_tmle(
    data: Dataset,
    cfg: NuisanceConfig,
    contrast: Contrast,
    seed: int = 0,
    oracle: OracleSource = None,
    fits: Optional[CrossFit] = None,
    max_sweeps: int = 10,
    outcome_form: Literal["score", "printed"] = "score",
) -> EstimateReport:
    """Cross-fitted TMLE for binary ``Z`` via logistic tilting of ``b``, ``q`` then ``v``.

    ``outcome_form`` selects how the outcome clever covariate is written (see
    :func:`intmed.eif.outcome_weight`); both forms are numerically identical.
    """
    return tmle_fit(data, cfg, contrast, seed, oracle, fits, max_sweeps, outcome_form)[0]


def estimate(
    kind: str,
    data: Dataset,
    cfg: NuisanceConfig,
    contrast: Contrast,
    seed: int = 0,
    oracle: OracleSource = None,
    fits: Optional[CrossFit] = None,
) -> EstimateReport:
    if kind == "onestep":
        return estimate_onestep(data, cfg, contrast, seed, False, oracle, fits)
    if kind == "onestep_stabilized":
        return estimate_onestep(data, cfg, contrast, seed, True, oracle, fits)
    if kind == "tmle":
        return estimate_tmle(data, cfg, contrast, seed, oracle, fits)
    if kind == "plugin":
        return estimate_plugin(data, cfg, contrast, seed, oracle, fits)
    raise ValueError(f"unknown estimator {kind!r}; choose from {ESTIMATORS}")
