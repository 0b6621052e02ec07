"""Shared data model: observations, datasets, contrasts, nuisance bundles, reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional, Tuple, Union

import numpy as np

#: Number of binary baseline covariates.
N_COVARIATES = 3

CSV_COLUMNS = ("w1", "w2", "w3", "a", "z", "m", "y")


class MediationError(Exception):
    """Base class for errors raised by this package."""


class SingularSystem(MediationError):
    pass


class BadFoldCount(MediationError):
    pass


class FoldMismatch(MediationError):
    pass


class DegenerateWeights(MediationError):
    pass


class TooFewObservations(MediationError):
    pass


class BadAlpha(MediationError):
    pass


class NuisanceFitError(MediationError):
    """A learner failed while fitting one nuisance on one training fold."""

    def __init__(self, nuisance: str, fold: int, cause: Exception):
        super().__init__(f"fitting {nuisance!r} on fold {fold} failed: {cause}")
        self.nuisance = nuisance
        self.fold = fold
        self.cause = cause


class NonConvergence(UserWarning):
    """IRLS hit its iteration cap; the last iterate is returned."""


class TiltNonConvergence(UserWarning):
    """The targeting loop hit its sweep cap before the score equations were solved."""


def _is_binary(x: np.ndarray) -> bool:
    return bool(np.all((x == 0) | (x == 1)))


@dataclass(frozen=True)
class Observation:
    w: Tuple[int, ...]
    a: int
    z: int
    m: int
    y: float

    def __post_init__(self):
        for name in ("a", "z", "m"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1")
        if any(wk not in (0, 1) for wk in self.w):
            raise ValueError("covariates must be 0 or 1")
        if not 0.0 <= self.y <= 1.0:
            raise ValueError("y must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented sample of ``n`` observations of ``(W, A, Z, M, Y)``.

    ``w`` has shape ``(n, p)``; the other columns have shape ``(n,)``.
    Arrays are made read-only on construction.
    """

    w: np.ndarray
    a: np.ndarray
    z: np.ndarray
    m: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.int64)
        if w.ndim != 2:
            w = w.reshape(-1, N_COVARIATES)
        cols = {k: np.asarray(getattr(self, k), dtype=np.int64) for k in ("a", "z", "m")}
        y = np.asarray(self.y, dtype=np.float64)
        n = w.shape[0]
        for k, v in {**cols, "y": y}.items():
            if v.shape != (n,):
                raise ValueError(f"column {k!r} has shape {v.shape}, expected ({n},)")
        if not (_is_binary(w) and all(_is_binary(v) for v in cols.values())):
            raise ValueError("w, a, z, m must be binary")
        if n and (y.min() < 0.0 or y.max() > 1.0):
            raise ValueError("y must lie in [0, 1]")
        for arr in (w, y, *cols.values()):
            arr.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "y", y)
        for k, v in cols.items():
            object.__setattr__(self, k, v)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> Observation:
        return Observation(
            w=tuple(int(x) for x in self.w[i]),
            a=int(self.a[i]),
            z=int(self.z[i]),
            m=int(self.m[i]),
            y=float(self.y[i]),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("w", "a", "z", "m", "y")
        )

    @classmethod
    def from_observations(cls, observations) -> "Dataset":
        obs = list(observations)
        if not obs:
            return cls.empty()
        return cls(
            w=np.array([o.w for o in obs]),
            a=np.array([o.a for o in obs]),
            z=np.array([o.z for o in obs]),
            m=np.array([o.m for o in obs]),
            y=np.array([o.y for o in obs], dtype=float),
        )

    @classmethod
    def empty(cls, n_covariates: int = N_COVARIATES) -> "Dataset":
        e = np.zeros(0, dtype=np.int64)
        return cls(w=np.zeros((0, n_covariates), dtype=np.int64), a=e, z=e, m=e, y=np.zeros(0))

    def subset(self, idx) -> "Dataset":
        return Dataset(w=self.w[idx], a=self.a[idx], z=self.z[idx], m=self.m[idx], y=self.y[idx])

    def replace_y(self, y) -> "Dataset":
        y = np.broadcast_to(np.asarray(y, dtype=float), (self.n,)).copy()
        return Dataset(w=self.w, a=self.a, z=self.z, m=self.m, y=y)

    # -- CSV ---------------------------------------------------------------

    def to_csv(self, path: Union[str, Path, None] = None) -> str:
        """Write ``w1..wp,a,z,m,y``; ``y`` uses ``repr`` so re-reading is bit-exact."""
        p = self.w.shape[1]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"w{k + 1}" for k in range(p)] + ["a", "z", "m", "y"])
        for i in range(self.n):
            writer.writerow(
                [int(x) for x in self.w[i]]
                + [int(self.a[i]), int(self.z[i]), int(self.m[i]), repr(float(self.y[i]))]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source: Union[str, Path]) -> "Dataset":
        """Read a dataset from a CSV path, or from CSV text if ``source`` contains a newline."""
        if isinstance(source, str) and "\n" in source:
            text = source
        else:
            text = Path(source).read_text()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        wcols = [i for i, h in enumerate(header) if h.startswith("w")]
        col = {h: i for i, h in enumerate(header)}
        if not body:
            return cls.empty(len(wcols))
        return cls(
            w=np.array([[int(r[i]) for i in wcols] for r in body]),
            a=np.array([int(r[col["a"]]) for r in body]),
            z=np.array([int(r[col["z"]]) for r in body]),
            m=np.array([int(r[col["m"]]) for r in body]),
            y=np.array([float(r[col["y"]]) for r in body]),
        )


@dataclass(frozen=True)
class Contrast:
    """The pair ``(a_prime, a_star)`` indexing ``theta = E(Y_{a', G_{a*}})``."""

    a_prime: int
    a_star: int

    def __post_init__(self):
        if self.a_prime not in (0, 1) or self.a_star not in (0, 1):
            raise ValueError("contrast levels must be 0 or 1")

    def __str__(self) -> str:
        return f"theta({self.a_prime},{self.a_star})"


def clip_prob(p, eps: float) -> np.ndarray:
    return np.clip(p, eps, 1.0 - eps)


def w_index(w) -> np.ndarray:
    """Pack a binary covariate array of shape ``(..., p)`` into integer cell codes."""
    w = np.asarray(w, dtype=np.int64)
    p = w.shape[-1]
    weights = 1 << np.arange(p - 1, -1, -1)
    return w @ weights


# Nuisance signatures (all vectorized over numpy arrays; w has shape (..., p)):
#   b(a, z, m, w) = E(Y | a, z, m, w)
#   g(a, w)       = P(A = a | w)
#   h(a, m, w)    = P(A = a | m, w)
#   q(z, a, w)    = P(Z = z | a, w)
#   r(z, a, m, w) = P(Z = z | a, m, w)
#   u(z, a, w), v(a, w): contrast-specific regressions
Fn = Callable[..., np.ndarray]


@dataclass(frozen=True)
class NuisanceBundle:
    b: Fn
    g: Fn
    h: Fn
    q: Fn
    r: Fn
    u: Fn
    v: Fn
    provenance: Mapping[str, str] = field(default_factory=dict)

    def with_components(self, **components) -> "NuisanceBundle":
        prov = dict(self.provenance)
        for name in components:
            prov.setdefault(name, "replaced")
        fields = {k: getattr(self, k) for k in ("b", "g", "h", "q", "r", "u", "v")}
        fields.update(components)
        return NuisanceBundle(**fields, provenance=prov)


def binary_pmf(p_one: Fn, eps: Optional[float] = None) -> Fn:
    """Wrap ``P(X = 1 | parents)`` as a pmf ``f(x, *parents)`` with ``f(1) + f(0) = 1``.

    When ``eps`` is given the success probability is clipped into ``[eps, 1 - eps]``
    before the complement is taken, so the two categories still sum to one.
    """

    def pmf(x, *parents):
        p1 = np.asarray(p_one(*parents), dtype=float)
        if eps is not None:
            p1 = clip_prob(p1, eps)
        x = np.asarray(x)
        return np.where(x == 1, p1, 1.0 - p1)

    return pmf


@dataclass(frozen=True)
class FoldAssignment:
    """Fold labels ``fold_of[i]`` in ``0..J-1``."""

    fold_of: np.ndarray
    J: int

    def __post_init__(self):
        f = np.asarray(self.fold_of, dtype=np.int64)
        f.setflags(write=False)
        object.__setattr__(self, "fold_of", f)

    @property
    def n(self) -> int:
        return self.fold_of.shape[0]

    def validation(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == j)

    def training(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != j)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.J)


@dataclass(frozen=True)
class EifScores:
    term_y: np.ndarray
    term_z: np.ndarray
    term_m: np.ndarray
    v_at_astar: np.ndarray

    @property
    def d(self) -> np.ndarray:
        return self.term_y + self.term_z + self.term_m + self.v_at_astar

    @property
    def n(self) -> int:
        return self.term_y.shape[0]


@dataclass
class EstimateReport:
    theta_hat: float
    sigma2_hat: float
    n: int
    ci: Dict[float, Tuple[float, float]]
    estimator: str
    diagnostics: Dict[str, object] = field(default_factory=dict)
    eif: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def se(self) -> float:
        return float(np.sqrt(self.sigma2_hat / self.n))

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "theta_hat": self.theta_hat,
            "sigma2_hat": self.sigma2_hat,
            "se": self.se,
            "n": self.n,
            "ci": {f"{level:g}": list(bounds) for level, bounds in sorted(self.ci.items())},
            "diagnostics": self.diagnostics,
        }
