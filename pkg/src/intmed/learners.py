"""Learners for the nuisance regressions and the cross-fitting engine.

Three learner kinds are available besides ``oracle`` passthrough:

* ``saturated``: per-cell (weighted) means over binary features, the
  nonparametric MLE on a finite support;
* ``logistic_main_terms``: IRLS logistic regression with an intercept and main
  terms (ordinary least squares for real-valued targets);
* ``intercept_only``: the marginal mean, i.e. the intercept-only logistic fit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import expit, logit, xlogy

from .core import (
    BadFoldCount,
    Contrast,
    Dataset,
    FoldAssignment,
    NonConvergence,
    NuisanceBundle,
    NuisanceFitError,
    SingularSystem,
    binary_pmf,
    clip_prob,
)
from .dgp import make_rng
from .eif import density_ratio_c, mediator_pseudo_outcome

KINDS = ("saturated", "logistic_main_terms", "intercept_only", "oracle")
BASE_NUISANCES = ("b", "g", "h", "q", "r")


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = "saturated"
    tol: float = 1e-8
    max_iter: int = 100
    ridge: float = 1e-8
    smoothing: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.tol <= 0 or self.max_iter <= 0 or self.ridge <= 0:
            raise ValueError("tol, max_iter and ridge must be positive")
        if self.smoothing < 0:
            raise ValueError("smoothing must be non-negative")


@dataclass
class FittedRegression:
    """A fitted regression ``features -> prediction`` plus training diagnostics."""

    predict_fn: Callable[[np.ndarray], np.ndarray]
    iterations: int = 0
    converged: bool = True
    deviance: float = float("nan")
    coef: Optional[np.ndarray] = None

    def predict(self, features, offset=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(features, dtype=float))
        if offset is None:
            return self.predict_fn(X)
        return self.predict_fn(X, offset)


def binomial_deviance(y, p, weights=None) -> float:
    """Quasi-binomial deviance; valid for ``y`` anywhere in ``[0, 1]``."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    dev = xlogy(y, y) - xlogy(y, p) + xlogy(1 - y, 1 - y) - xlogy(1 - y, 1 - p)
    return float(2.0 * np.sum(w * dev))


def fit_logistic_irls(
    features,
    outcome,
    weights=None,
    offset=None,
    tol: float = 1e-8,
    max_iter: int = 100,
    ridge: float = 1e-8,
) -> FittedRegression:
    """Maximize the quasi-binomial log-likelihood of ``outcome`` in ``[0, 1]``.

    Newton/IRLS steps with step halving on deviance increase. Converged when the
    largest coefficient change falls below ``tol``. If the weighted Gram matrix
    is ill-conditioned a ridge of ``ridge`` is added to its diagonal; if it is
    still singular :class:`SingularSystem` is raised. Hitting ``max_iter`` emits
    :class:`NonConvergence` and returns the last iterate with ``converged=False``.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.shape[0] == 1 and np.ndim(features) == 1:
        X = X.T
    y = np.asarray(outcome, dtype=float)
    n, k = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if not (y.shape == w.shape == off.shape == (n,)) or n < 1:
        raise ValueError("features, outcome, weights and offset must have matching length >= 1")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(off))):
        raise ValueError("features, outcome and offset must be finite")

    beta = np.zeros(k)
    p = expit(X @ beta + off)
    dev = binomial_deviance(y, p, w)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        score = X.T @ (w * (y - p))
        info = (X * (w * p * (1 - p))[:, None]).T @ X
        if not np.all(np.isfinite(info)) or np.linalg.cond(info) > 1e12:
            info = info + ridge * np.eye(k)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
        new_dev = np.inf
        for _ in range(30):
            cand = beta + step
            p_new = expit(X @ cand + off)
            new_dev = binomial_deviance(y, p_new, w)
            if new_dev <= dev + 1e-12 * (1 + abs(dev)):
                break
            step = step / 2
        beta, p, dev = cand, p_new, new_dev
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"IRLS did not converge in {max_iter} iterations", NonConvergence, stacklevel=2)

    coef = beta.copy()

    def predict(Xnew, offset_new=None):
        eta = Xnew @ coef
        if offset_new is not None:
            eta = eta + offset_new
        return expit(eta)

    return FittedRegression(predict, iterations=it, converged=converged, deviance=dev, coef=coef)


def _cell_codes(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    if not np.all((X == 0) | (X == 1)):
        raise ValueError("saturated learner requires binary features")
    weights = 1 << np.arange(X.shape[1] - 1, -1, -1)
    return X.astype(np.int64) @ weights


def fit_saturated(features, outcome, smoothing: float = 0.0, weights=None, prior: float = 0.5) -> FittedRegression:
    """Cell means over binary features, shrunk toward ``prior`` by ``smoothing`` pseudo-counts.

    The prediction in a cell is ``(sum y + 2 s prior) / (count + 2 s)``; empty
    cells predict ``prior``.
    """
    X = np.atleast_2d(np.asarray(features))
    y = np.asarray(outcome, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    codes = _cell_codes(X)
    size = 1 << X.shape[1]
    count = np.bincount(codes, weights=w, minlength=size)
    total = np.bincount(codes, weights=w * y, minlength=size)
    denom = count + 2.0 * smoothing
    with np.errstate(invalid="ignore", divide="ignore"):
        table = np.where(denom > 0, (total + 2.0 * smoothing * prior) / denom, prior)

    def predict(Xnew):
        return table[_cell_codes(Xnew)]

    return FittedRegression(predict, deviance=float("nan"))


def _fit_ols(X, y) -> FittedRegression:
    design = np.column_stack([np.ones(len(y)), X])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)

    def predict(Xnew):
        return np.column_stack([np.ones(len(Xnew)), Xnew]) @ coef

    return FittedRegression(predict, coef=coef)


def _fit_mean(y) -> FittedRegression:
    mu = float(np.mean(y))

    def predict(Xnew):
        return np.full(len(Xnew), mu)

    return FittedRegression(predict, coef=np.array([mu]))


def fit_regression(spec: LearnerSpec, features, outcome, family: str = "binomial") -> FittedRegression:
    """Dispatch on ``spec.kind``; ``family`` is ``binomial`` (target in [0,1]) or ``gaussian``."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(outcome, dtype=float)
    if y.size == 0:
        raise ValueError("no training rows")
    if spec.kind == "saturated":
        # back off to the training mean in empty or thin cells
        return fit_saturated(X, y, smoothing=spec.smoothing, prior=float(np.mean(y)))
    if spec.kind == "intercept_only":
        return _fit_mean(y)
    if spec.kind == "logistic_main_terms":
        if family == "gaussian":
            return _fit_ols(X, y)
        design = np.column_stack([np.ones(len(y)), X])
        fit = fit_logistic_irls(design, y, tol=spec.tol, max_iter=spec.max_iter, ridge=spec.ridge)
        inner = fit.predict_fn
        fit.predict_fn = lambda Xnew: inner(np.column_stack([np.ones(len(Xnew)), Xnew]))
        return fit
    raise ValueError("oracle learners are resolved by the caller")


class RegressionFn:
    """Adapt a fitted regression to the nuisance calling convention ``f(*binary_args, w)``."""

    def __init__(self, fit: FittedRegression, eps: Optional[float] = None):
        self.fit = fit
        self.eps = eps

    def __call__(self, *args):
        *lead, w = args
        w = np.asarray(w)
        lead = [np.asarray(x) for x in lead]
        shape = np.broadcast_shapes(*(x.shape for x in lead), w.shape[:-1])
        cols = [np.broadcast_to(x, shape).reshape(-1) for x in lead]
        wmat = np.broadcast_to(w, shape + w.shape[-1:]).reshape(-1, w.shape[-1])
        X = np.column_stack(cols + [wmat]) if cols else wmat
        pred = self.fit.predict(X).reshape(shape)
        return clip_prob(pred, self.eps) if self.eps is not None else pred


# One pseudo-count per side keeps sparse strata (a handful of training rows) away
# from the clip boundary, where a single 0/1 cell mean turns into a 1/eps weight.
SATURATED = LearnerSpec("saturated", smoothing=1.0)
INTERCEPT = LearnerSpec("intercept_only")
ORACLE = LearnerSpec("oracle")

SCENARIOS = ("all_consistent", "miss_b", "miss_g", "miss_q", "miss_h", "miss_r", "all_misspecified")


@dataclass(frozen=True)
class NuisanceConfig:
    b: LearnerSpec = SATURATED
    g: LearnerSpec = SATURATED
    h: LearnerSpec = SATURATED
    q: LearnerSpec = SATURATED
    r: LearnerSpec = SATURATED
    u: LearnerSpec = SATURATED
    v: LearnerSpec = SATURATED
    eps: float = 0.001
    folds: int = 5

    def __post_init__(self):
        if not 0.0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 0.5)")
        if self.folds < 2:
            raise BadFoldCount("at least two folds are required")

    def learner(self, name: str) -> LearnerSpec:
        return getattr(self, name)

    @property
    def uses_oracle(self) -> bool:
        return any(self.learner(k).kind == "oracle" for k in "bghqruv")

    @classmethod
    def scenario(cls, name: str, **kwargs) -> "NuisanceConfig":
        """Saturated learners everywhere except the components the scenario breaks."""
        if name not in SCENARIOS:
            raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
        if name == "all_consistent":
            wrong = ()
        elif name == "all_misspecified":
            wrong = tuple("bghqruv")
        else:
            wrong = (name.split("_", 1)[1],)
        return cls(**{k: INTERCEPT for k in wrong}, **kwargs)

    @classmethod
    def oracle(cls, **kwargs) -> "NuisanceConfig":
        return cls(**{k: ORACLE for k in "bghqruv"}, **kwargs)


def make_folds(n: int, J: int, seed: int = 0) -> FoldAssignment:
    """Random partition of ``0..n-1`` into ``J`` folds whose sizes differ by at most one."""
    if J < 2 or J > n:
        raise BadFoldCount(f"need 2 <= J <= n, got J={J}, n={n}")
    # a jumped segment of the seed's stream, so folds never reuse the uniforms that drew the data
    bitgen = make_rng(seed).bit_generator.jumped()
    perm = np.random.Generator(bitgen).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % J
    return FoldAssignment(fold_of=fold_of, J=J)


OracleSource = Union[NuisanceBundle, Callable[[Contrast], NuisanceBundle], None]


def _oracle_for(oracle: OracleSource, contrast: Optional[Contrast]) -> Optional[NuisanceBundle]:
    if oracle is None or isinstance(oracle, NuisanceBundle):
        return oracle
    return oracle(contrast if contrast is not None else Contrast(1, 0))


def _unset(*args):
    raise RuntimeError("contrast-specific nuisance not fitted yet")


def _features(data: Dataset, rows, *cols: str) -> np.ndarray:
    parts = [getattr(data, c)[rows][:, None] for c in cols]
    return np.hstack(parts + [data.w[rows]]).astype(float)


# regressand and regressors for each base nuisance
_BASE_DESIGN = {
    "b": ("y", ("a", "z", "m")),
    "g": ("a", ()),
    "h": ("a", ("m",)),
    "q": ("z", ("a",)),
    "r": ("z", ("a", "m")),
}


def fit_base_fold(data: Dataset, rows, cfg: NuisanceConfig, oracle: OracleSource = None, fold: int = -1) -> NuisanceBundle:
    """Fit ``b, g, h, q, r`` on ``rows``; ``u`` and ``v`` are left unset."""
    comps: Dict[str, Callable] = {}
    prov: Dict[str, str] = {}
    for name, (target, regressors) in _BASE_DESIGN.items():
        spec = cfg.learner(name)
        if spec.kind == "oracle":
            ob = _oracle_for(oracle, None)
            if ob is None:
                raise ValueError(f"learner for {name!r} is 'oracle' but no oracle bundle was given")
            comps[name] = getattr(ob, name)
            prov[name] = "oracle"
            continue
        try:
            fit = fit_regression(spec, _features(data, rows, *regressors), getattr(data, target)[rows])
        except Exception as exc:
            raise NuisanceFitError(name, fold, exc) from exc
        fn = RegressionFn(fit)
        comps[name] = RegressionFn(fit, cfg.eps) if name == "b" else binary_pmf(fn, cfg.eps)
        prov[name] = f"fitted:{spec.kind}"
    return NuisanceBundle(**comps, u=_unset, v=_unset, provenance=prov)


def fit_v_fold(
    data: Dataset, rows, pseudo: np.ndarray, spec: LearnerSpec, eps: float, oracle_v=None, fold: int = -1
):
    """Regress a mediator pseudo-outcome in ``[0, 1]`` on ``(A, W)``."""
    if spec.kind == "oracle":
        if oracle_v is None:
            raise ValueError("learner for 'v' is 'oracle' but no oracle bundle was given")
        return oracle_v
    try:
        fit = fit_regression(spec, _features(data, rows, "a"), pseudo)
    except Exception as exc:
        raise NuisanceFitError("v", fold, exc) from exc
    return RegressionFn(fit, eps)


def fit_contrast_fold(
    data: Dataset,
    rows,
    base: NuisanceBundle,
    cfg: NuisanceConfig,
    contrast: Contrast,
    oracle: OracleSource = None,
    fold: int = -1,
) -> NuisanceBundle:
    """Add the contrast-specific ``u`` and ``v`` to a base bundle fitted on the same ``rows``."""
    ob = _oracle_for(oracle, contrast)
    a, z, m, w = data.a[rows], data.z[rows], data.m[rows], data.w[rows]
    prov = dict(base.provenance)

    if cfg.u.kind == "oracle":
        if ob is None:
            raise ValueError("learner for 'u' is 'oracle' but no oracle bundle was given")
        u = ob.u
        prov["u"] = "oracle"
    else:
        pseudo_u = base.b(a, z, m, w) * density_ratio_c(base, a, z, m, w, contrast)
        try:
            fit = fit_regression(cfg.u, _features(data, rows, "z", "a"), pseudo_u, family="gaussian")
        except Exception as exc:
            raise NuisanceFitError("u", fold, exc) from exc
        u = RegressionFn(fit)
        prov["u"] = f"fitted:{cfg.u.kind}"

    pseudo_v = mediator_pseudo_outcome(base, contrast, m, w)
    v = fit_v_fold(data, rows, pseudo_v, cfg.v, cfg.eps, None if ob is None else ob.v, fold)
    prov["v"] = "oracle" if cfg.v.kind == "oracle" else f"fitted:{cfg.v.kind}"
    return replace(base, u=u, v=v, provenance=prov)


def fit_base_nuisances(
    data: Dataset, folds: FoldAssignment, cfg: NuisanceConfig, oracle: OracleSource = None
) -> List[NuisanceBundle]:
    if cfg.uses_oracle and oracle is None:
        raise ValueError("configuration uses oracle learners but no oracle bundle was given")
    return [fit_base_fold(data, folds.training(j), cfg, oracle, fold=j) for j in range(folds.J)]


def fit_contrast_nuisances(
    data: Dataset,
    folds: FoldAssignment,
    base: Sequence[NuisanceBundle],
    cfg: NuisanceConfig,
    contrast: Contrast,
    oracle: OracleSource = None,
) -> List[NuisanceBundle]:
    return [
        fit_contrast_fold(data, folds.training(j), base[j], cfg, contrast, oracle, fold=j)
        for j in range(folds.J)
    ]


def crossfit_nuisances(
    data: Dataset,
    folds: FoldAssignment,
    cfg: NuisanceConfig,
    contrast: Contrast,
    oracle: OracleSource = None,
) -> List[NuisanceBundle]:
    """Per-fold bundles, each trained only on the rows outside its validation fold."""
    base = fit_base_nuisances(data, folds, cfg, oracle)
    return fit_contrast_nuisances(data, folds, base, cfg, contrast, oracle)
