"""Monte Carlo grid runner, oracle truth tables and the exact-identity verifier."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import Contrast
from .dgp import (
    NUISANCES,
    DgpSpec,
    all_observation_cells,
    alt_eif_value,
    effect_efficiency_bound,
    efficiency_bound,
    eif_moments,
    eif_mean_misspec,
    general_eif,
    misspecified_bundle,
    oracle_nuisances,
    random_bundle,
    sample_dataset,
    scenario_limit_bundle,
    second_order_terms,
    support_cells,
    true_theta,
)
from .effects import DECOMPOSITION, decompose_effects, true_effects
from .eif import eif_components
from .estimators import CrossFit
from .learners import SCENARIOS, NuisanceConfig

GRID_ESTIMATORS = ("onestep", "onestep_stabilized", "tmle")
GRID_EFFECTS = ("theta(1,0)", "indirect", "direct")
DEFAULT_SIZES = (200, 800, 1800, 3200, 5000)
DEFAULT_REPS = 200
QUICK_SIZES = (200, 800)
QUICK_REPS = 50
JOBS_ENV = "INTMED_JOBS"

REPLICATION_HEADER = (
    "scenario", "estimator", "effect", "n", "rep", "seed", "theta_hat", "se",
    "ci95_lo", "ci95_hi", "ci99_lo", "ci99_hi", "covered95", "covered99", "error",
)
SUMMARY_HEADER = (
    "scenario", "estimator", "effect", "n", "sqrt_n_abs_bias", "n_mse_over_bound",
    "coverage95", "coverage99", "mean_se", "replications",
)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "all_consistent"
    sample_sizes: Tuple[int, ...] = DEFAULT_SIZES
    replications: int = DEFAULT_REPS
    estimators: Tuple[str, ...] = GRID_ESTIMATORS
    base_seed: int = 0
    folds: int = 5

    def __post_init__(self):
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.name not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.name!r}; choose from {SCENARIOS}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not self.sample_sizes or min(self.sample_sizes) <= 0:
            raise ValueError("sample sizes must be strictly positive")
        bad = set(self.estimators) - set(GRID_ESTIMATORS)
        if bad or not self.estimators:
            raise ValueError(f"estimators must be a non-empty subset of {GRID_ESTIMATORS}")

    @classmethod
    def quick(cls, name: str = "all_consistent", **kw) -> "ScenarioSpec":
        return cls(name=name, sample_sizes=QUICK_SIZES, replications=QUICK_REPS, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sample_sizes"] = list(self.sample_sizes)
        d["estimators"] = list(self.estimators)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ScenarioSpec fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class MetricsRow:
    scenario: str
    estimator: str
    effect: str
    n: int
    sqrt_n_abs_bias: float
    n_mse_over_bound: float
    coverage95: float
    coverage99: float
    mean_se: float
    replications: int

    def __post_init__(self):
        for cov in (self.coverage95, self.coverage99):
            if not (math.isnan(cov) or 0.0 <= cov <= 1.0):
                raise ValueError("coverage must lie in [0, 1]")
        if self.n_mse_over_bound < 0:
            raise ValueError("scaled MSE must be non-negative")


@dataclass
class ReplicationRow:
    """One line of the per-replication CSV plus in-memory diagnostics."""

    scenario: str
    estimator: str
    effect: str
    n: int
    rep: int
    seed: int
    theta_hat: float = math.nan
    se: float = math.nan
    ci95: Tuple[float, float] = (math.nan, math.nan)
    ci99: Tuple[float, float] = (math.nan, math.nan)
    covered95: Optional[bool] = None
    covered99: Optional[bool] = None
    error: str = ""
    diagnostics: Dict[str, object] = field(default_factory=dict, repr=False)

    def csv_fields(self) -> List[str]:
        def num(x):
            return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))

        def flag(x):
            return "" if x is None else str(int(x))

        return [
            self.scenario, self.estimator, self.effect, str(self.n), str(self.rep), str(self.seed),
            num(self.theta_hat), num(self.se), num(self.ci95[0]), num(self.ci95[1]),
            num(self.ci99[0]), num(self.ci99[1]), flag(self.covered95), flag(self.covered99),
            self.error,
        ]


def derive_seed(base: int, scenario: str, n: int, rep: int) -> int:
    """Replication seed from a keyed hash of its grid coordinates (63-bit)."""
    key = f"{base}|{scenario}|{n}|{rep}".encode()
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def truth_table(dgp: DgpSpec) -> Dict[str, Tuple[float, float]]:
    """``effect -> (true value, efficiency bound)`` for the grid effects."""
    c11, c10, c00 = DECOMPOSITION
    eff = true_effects(dgp)
    return {
        "theta(1,0)": (true_theta(dgp, c10), efficiency_bound(dgp, c10)),
        "indirect": (eff["indirect"], effect_efficiency_bound(dgp, c11, c10)),
        "direct": (eff["direct"], effect_efficiency_bound(dgp, c10, c00)),
    }


def _report_for(effects, effect: str):
    if effect == "theta(1,0)":
        return effects.thetas[Contrast(1, 0)]
    return effects[effect]


def run_replication(
    scenario: str,
    estimators: Sequence[str],
    n: int,
    rep: int,
    seed: int,
    folds: int,
    truths: Dict[str, Tuple[float, float]],
    dgp: Optional[DgpSpec] = None,
) -> List[ReplicationRow]:
    """Sample one dataset and run every estimator on it; errors become row entries."""
    dgp = DgpSpec() if dgp is None else dgp
    rows: List[ReplicationRow] = []
    base = dict(scenario=scenario, n=n, rep=rep, seed=seed)
    cfg = NuisanceConfig.scenario(scenario, folds=folds)
    try:
        data = sample_dataset(dgp, n, seed)
        fits = CrossFit.fit(data, cfg, seed)
    except Exception as exc:  # recorded, grid continues
        msg = f"{type(exc).__name__}: {exc}"
        return [
            ReplicationRow(estimator=e, effect=eff, error=msg, **base)
            for e in estimators for eff in GRID_EFFECTS
        ]
    for est in estimators:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                effects = decompose_effects(data, cfg, est, seed, fits=fits)
        except Exception as exc:
            msg = f"{type(exc).__name__}: {exc}"
            rows.extend(ReplicationRow(estimator=est, effect=eff, error=msg, **base) for eff in GRID_EFFECTS)
            continue
        for eff in GRID_EFFECTS:
            rep_ = _report_for(effects, eff)
            truth = truths[eff][0]
            lo95, hi95 = rep_.ci[0.95]
            lo99, hi99 = rep_.ci[0.99]
            diag = {}
            if eff == "theta(1,0)":
                # every contrast fit plus the decomposition residual, for in-memory checks
                diag = {
                    "contrasts": {
                        str(c): {"theta_hat": r.theta_hat, **r.diagnostics} for c, r in effects.thetas.items()
                    },
                    "decomposition_residual": (
                        effects.indirect.theta_hat + effects.direct.theta_hat - effects.total.theta_hat
                    ),
                }
            rows.append(
                ReplicationRow(
                    estimator=est, effect=eff, theta_hat=rep_.theta_hat, se=rep_.se,
                    ci95=(lo95, hi95), ci99=(lo99, hi99),
                    covered95=bool(lo95 <= truth <= hi95), covered99=bool(lo99 <= truth <= hi99),
                    diagnostics=diag, **base,
                )
            )
    return rows


def _run_task(args):
    return run_replication(*args)


def summarize(rows: Sequence[ReplicationRow], truths: Dict[str, Tuple[float, float]]) -> List[MetricsRow]:
    """Aggregate successful replications per (scenario, estimator, effect, n), in first-seen order."""
    groups: Dict[tuple, List[ReplicationRow]] = {}
    for r in rows:
        groups.setdefault((r.scenario, r.estimator, r.effect, r.n), []).append(r)
    out = []
    for (sc, est, eff, n), grp in groups.items():
        ok = [r for r in grp if not r.error]
        truth, bound = truths[eff]
        if ok:
            err = np.array([r.theta_hat - truth for r in ok])
            bias = float(np.sqrt(n) * abs(err.mean()))
            mse = float(n * np.mean(err**2) / bound)
            cov95 = float(np.mean([r.covered95 for r in ok]))
            cov99 = float(np.mean([r.covered99 for r in ok]))
            mean_se = float(np.mean([r.se for r in ok]))
        else:
            bias = mse = cov95 = cov99 = mean_se = math.nan
        out.append(MetricsRow(sc, est, eff, n, bias, mse, cov95, cov99, mean_se, len(ok)))
    return out


@dataclass
class GridResult:
    rows: List[ReplicationRow]
    summary: List[MetricsRow]
    paths: Dict[str, Path] = field(default_factory=dict)

    @property
    def n_errors(self) -> int:
        return sum(1 for r in self.rows if r.error)


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


def run_grid(
    spec,
    out_dir=None,
    jobs: Optional[int] = None,
    dgp: Optional[DgpSpec] = None,
) -> GridResult:
    """Run one or more :class:`ScenarioSpec` grids and write CSV/JSON artifacts.

    Files written to ``out_dir`` (when given): ``replications.csv``,
    ``summary.csv`` and ``config.json``. Output is byte-identical for the same
    specs regardless of ``jobs``.
    """
    specs = [spec] if isinstance(spec, ScenarioSpec) else list(spec)
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    dgp = DgpSpec() if dgp is None else dgp
    truths = truth_table(dgp)
    tasks = [
        (s.name, s.estimators, n, rep, derive_seed(s.base_seed, s.name, n, rep), s.folds, truths, dgp)
        for s in specs for n in s.sample_sizes for rep in range(s.replications)
    ]
    if jobs == 1:
        nested = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            nested = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    rows = [r for group in nested for r in group]
    result = GridResult(rows=rows, summary=summarize(rows, truths))
    if out_dir is not None:
        result.paths = write_grid(result, specs, Path(out_dir))
    return result


def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def write_grid(result: GridResult, specs: Sequence[ScenarioSpec], out_dir: Path) -> Dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "replications": out_dir / "replications.csv",
        "summary": out_dir / "summary.csv",
        "config": out_dir / "config.json",
    }
    with open(paths["replications"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLICATION_HEADER)
        for r in result.rows:
            w.writerow(r.csv_fields())
    with open(paths["summary"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for m in result.summary:
            w.writerow([_fmt(getattr(m, k)) for k in SUMMARY_HEADER])
    config = specs[0].to_dict() if len(specs) == 1 else [s.to_dict() for s in specs]
    paths["config"].write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return paths


def load_config(path) -> List[ScenarioSpec]:
    doc = json.loads(Path(path).read_text())
    docs = doc if isinstance(doc, list) else [doc]
    return [ScenarioSpec.from_dict(d) for d in docs]


# -- oracle truth table -----------------------------------------------------------


@dataclass
class OracleReport:
    thetas: Dict[Contrast, Tuple[float, float]]  # value, efficiency bound
    effects: Dict[str, Tuple[float, float]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "value", "efficiency_bound"])
        for c, (val, bound) in self.thetas.items():
            w.writerow([str(c), repr(val), repr(bound)])
        for name, (val, bound) in self.effects.items():
            w.writerow([name, repr(val), repr(bound)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'quantity':<12} {'value':>12} {'eff. bound':>12}"]
        for c, (val, bound) in self.thetas.items():
            lines.append(f"{str(c):<12} {val:>12.8f} {bound:>12.6f}")
        for name, (val, bound) in self.effects.items():
            lines.append(f"{name:<12} {val:>12.8f} {bound:>12.6f}")
        return "\n".join(lines)


def oracle_report(contrast: Optional[Contrast] = None, dgp: Optional[DgpSpec] = None) -> OracleReport:
    """Exact truths for the decomposition contrasts (and ``contrast`` when given)."""
    dgp = DgpSpec() if dgp is None else dgp
    contrasts = list(DECOMPOSITION) + [Contrast(0, 1)]
    if contrast is not None and contrast not in contrasts:
        contrasts.append(contrast)
    thetas = {c: (true_theta(dgp, c), efficiency_bound(dgp, c)) for c in contrasts}
    c11, c10, c00 = DECOMPOSITION
    eff = true_effects(dgp)
    effects = {
        "indirect": (eff["indirect"], effect_efficiency_bound(dgp, c11, c10)),
        "direct": (eff["direct"], effect_efficiency_bound(dgp, c10, c00)),
        "total": (eff["total"], effect_efficiency_bound(dgp, c11, c00)),
    }
    return OracleReport(thetas=thetas, effects=effects)


# -- exact identity suite ---------------------------------------------------------

ROBUST_CONFIGS = {
    # (component held exact, alternative set held exact); every other component wrong
    "v & (q,h,r)": ("v", "q", "h", "r"),
    "v & (b,q)": ("v", "b", "q"),
    "v & (b,u)": ("v", "b", "u"),
    "g & (q,h,r)": ("g", "q", "h", "r"),
    "g & (b,q)": ("g", "b", "q"),
    "g & (b,u)": ("g", "b", "u"),
}


@dataclass
class IdentityCheck:
    name: str
    discrepancy: float
    tolerance: float
    passed: bool
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<44} max|diff| = {self.discrepancy:.3e}  (tol {self.tolerance:.0e}) {self.note}".rstrip()


def _check(name, disc, tol, note="", greater=False) -> IdentityCheck:
    passed = disc > tol if greater else disc < tol
    return IdentityCheck(name, float(disc), tol, bool(passed), note)


def _corrupt_c(bundle):
    """Swap the roles of ``h(a*|m,w)`` and ``h(a|m,w)`` so the mediator ratio is inverted."""
    h = bundle.h
    return bundle.with_components(h=lambda a, m, w: h(1 - np.asarray(a), m, w))


def robust_bundle(dgp: DgpSpec, contrast: Contrast, exact: Iterable[str]):
    return misspecified_bundle(dgp, contrast, set(NUISANCES) - set(exact))


def verify_identities(
    dgp: Optional[DgpSpec] = None,
    corrupt_c: bool = False,
    tol: float = 1e-10,
    n_random: int = 20,
    seed: int = 0,
) -> List[IdentityCheck]:
    """Run the exact enumeration identities and report each with its discrepancy."""
    dgp = DgpSpec() if dgp is None else dgp
    checks: List[IdentityCheck] = []
    cells = support_cells(dgp)

    for c in DECOMPOSITION:
        bundle = oracle_nuisances(dgp, c)
        mean, var = eif_moments(dgp, c, bundle)
        checks.append(_check(f"E[D] = theta {c}", abs(mean - true_theta(dgp, c)), 1e-12))
        # variance recomputed from the density-form EIF
        d0 = general_eif(dgp, c, cells.a, cells.z, cells.m, cells.w, np.zeros_like(cells.b))
        d1 = general_eif(dgp, c, cells.a, cells.z, cells.m, cells.w, np.ones_like(cells.b))
        p1, p0 = cells.prob * cells.b, cells.prob * (1 - cells.b)
        mu = np.sum(p0 * d0 + p1 * d1)
        var2 = np.sum(p0 * (d0 - mu) ** 2 + p1 * (d1 - mu) ** 2)
        checks.append(_check(f"Var[D] two routes {c}", abs(var - var2), tol))

    c10 = Contrast(1, 0)
    theta = true_theta(dgp, c10)
    for label, exact in ROBUST_CONFIGS.items():
        gap = abs(eif_mean_misspec(dgp, c10, robust_bundle(dgp, c10, exact)) - theta)
        checks.append(_check(f"robustness {label}", gap, tol))
    miss_q = scenario_limit_bundle(dgp, c10, {"q"})
    checks.append(
        _check("miss-q limit is biased", abs(eif_mean_misspec(dgp, c10, miss_q) - theta), 1e-6,
               note="(must exceed)", greater=True)
    )

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_random):
        bundle = random_bundle(dgp, c10, rng)
        gap = eif_mean_misspec(dgp, c10, bundle) - theta
        worst = max(worst, abs(second_order_terms(dgp, c10, bundle).total - gap))
    checks.append(_check(f"second-order expansion ({n_random} random)", worst, tol))
    oracle_total = abs(second_order_terms(dgp, c10, oracle_nuisances(dgp, c10)).total)
    checks.append(_check("second-order terms vanish at truth", oracle_total, tol))

    for c in DECOMPOSITION:
        bundle = oracle_nuisances(dgp, c)
        if corrupt_c:
            bundle = _corrupt_c(bundle)
        worst = 0.0
        for w, a, z, m, y in all_observation_cells(dgp):
            wv = np.asarray(w)
            prim = eif_components(bundle, c, a, z, m, wv, y).d
            alt = alt_eif_value(dgp, c, _Obs(wv, a, z, m, y))
            worst = max(worst, abs(float(prim) - alt))
        checks.append(_check(f"alternate EIF pointwise {c}", worst, tol))
    return checks


@dataclass(frozen=True)
class _Obs:
    w: np.ndarray
    a: int
    z: int
    m: int
    y: float
