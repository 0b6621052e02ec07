"""Synthetic all-binary data-generating process and its exact enumeration oracle.

Every quantity the estimators target (the mediational parameter, the nuisance
functions, the variance of the efficient influence function, probability limits
of misspecified learners) is computed here by summing over the 2^6 support
cells of ``(W1, W2, W3, A, Z, M)`` with ``Y`` integrated out analytically.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Iterable, Optional, Tuple

import numpy as np

from .core import Contrast, Dataset, NuisanceBundle, w_index
from .eif import density_ratio_c, eif_components

NUISANCES = ("b", "g", "h", "q", "r", "u", "v")


def expit(x):
    """The link printed in the simulation design: ``1 / (1 + exp(x))``.

    This is the logistic CDF evaluated at ``-x``; it is kept as printed.
    """
    return 1.0 / (1.0 + np.exp(x))


def _p_w1():
    return 0.6


def _p_w2(w1):
    return 0.3 + 0.0 * w1


def _p_w3(w1, w2):
    return 0.2 + (w1 + w2) / 3.0


def _p_a(w1, w2, w3):
    return expit(0.25 * (w1 + w2 + w3) + 3.0 * w1 * w2 - 2.0)


def _p_z(a, w1, w2, w3):
    return expit((w1 + w2 + w3) / 3.0 - a - a * w3 - 0.25)


def _p_m(z, a, w1, w2, w3):
    return expit(w1 + w2 + a - z + a * z - 0.3 * a * w2)


def _p_y(m, z, a, w1, w2, w3):
    return expit((a - z + m - a * z) / (w1 + w2 + w3 + 1.0))


@dataclass(frozen=True)
class DgpSpec:
    """Conditional success probabilities of the sequential binary mechanism.

    Each field maps parent values (numpy arrays) to ``P(node = 1 | parents)``.
    The defaults are the published design; replacing a field with
    :func:`dataclasses.replace` is the hook for degenerate test variants.
    """

    p_w1: Callable = _p_w1
    p_w2: Callable = _p_w2
    p_w3: Callable = _p_w3
    p_a: Callable = _p_a
    p_z: Callable = _p_z
    p_m: Callable = _p_m
    p_y: Callable = _p_y
    seed: int = 0

    def __post_init__(self):
        t = self.tables
        for name in ("pw1", "pw2", "pw3", "g1", "q1", "pm1"):
            p = getattr(t, name)
            if not np.all((p > 0.0) & (p < 1.0)):
                raise ValueError(f"{name}: conditional probabilities must lie in (0, 1)")
        if not np.all((t.b >= 0.0) & (t.b <= 1.0)):
            raise ValueError("outcome probabilities must lie in [0, 1]")

    @cached_property
    def tables(self) -> "Tables":
        return Tables.build(self)

    def replace(self, **changes) -> "DgpSpec":
        return dataclasses.replace(self, **changes)


def _bern(p1, x):
    return np.where(x == 1, p1, 1.0 - p1)


@dataclass(frozen=True)
class Tables:
    """Dense probability tables indexed by binary values; ``w`` is the packed cell code.

    ``G[a, w]``, ``Q[z, a, w]``, ``PM[m, z, a, w]`` (mediator given ``z, a, w``),
    ``B[a, z, m, w]``, ``PMA[m, a, w]`` (mediator given ``a, w``),
    ``H[a, m, w]`` and ``R[z, a, m, w]`` obtained by Bayes inversion.
    """

    pw: np.ndarray
    pw1: np.ndarray
    pw2: np.ndarray
    pw3: np.ndarray
    g1: np.ndarray
    q1: np.ndarray
    pm1: np.ndarray
    b: np.ndarray
    G: np.ndarray
    Q: np.ndarray
    PM: np.ndarray
    PMA: np.ndarray
    H: np.ndarray
    R: np.ndarray
    W: np.ndarray  # (8, 3) covariate rows in code order

    @classmethod
    def build(cls, spec: DgpSpec) -> "Tables":
        W = np.array(list(itertools.product((0, 1), repeat=3)))
        w1, w2, w3 = W[:, 0], W[:, 1], W[:, 2]
        shape8 = (8,)
        pw1 = np.broadcast_to(np.asarray(spec.p_w1(), float), shape8)
        pw2 = np.broadcast_to(np.asarray(spec.p_w2(w1), float), shape8)
        pw3 = np.broadcast_to(np.asarray(spec.p_w3(w1, w2), float), shape8)
        pw = _bern(pw1, w1) * _bern(pw2, w2) * _bern(pw3, w3)

        g1 = np.broadcast_to(np.asarray(spec.p_a(w1, w2, w3), float), shape8)
        a = np.arange(2)[:, None]
        q1 = np.broadcast_to(np.asarray(spec.p_z(a, w1, w2, w3), float), (2, 8))
        z3, a3 = np.meshgrid(np.arange(2), np.arange(2), indexing="ij")
        pm1 = np.broadcast_to(
            np.asarray(spec.p_m(z3[..., None], a3[..., None], w1, w2, w3), float), (2, 2, 8)
        )
        m4, z4, a4 = np.meshgrid(np.arange(2), np.arange(2), np.arange(2), indexing="ij")
        py = np.broadcast_to(
            np.asarray(
                spec.p_y(m4[..., None], z4[..., None], a4[..., None], w1, w2, w3), float
            ),
            (2, 2, 2, 8),
        )  # indexed [m, z, a, w]
        B = np.transpose(py, (2, 1, 0, 3)).copy()  # [a, z, m, w]

        G = np.stack([1.0 - g1, g1])  # [a, w]
        Q = np.stack([1.0 - q1, q1])  # [z, a, w]
        PM = np.stack([1.0 - pm1, pm1])  # [m, z, a, w]
        PMA = np.einsum("mzaw,zaw->maw", PM, Q)
        joint_am = PMA * G[None]  # [m, a, w]
        H = np.transpose(joint_am / joint_am.sum(axis=1, keepdims=True), (1, 0, 2))  # [a, m, w]
        R = np.einsum("zaw,mzaw->zamw", Q, PM) / PMA.transpose(1, 0, 2)[None]  # [z, a, m, w]
        return cls(
            pw=pw, pw1=pw1, pw2=pw2, pw3=pw3, g1=g1, q1=q1, pm1=pm1, b=B,
            G=G, Q=Q, PM=PM, PMA=PMA, H=H, R=R, W=W,
        )

    def joint(self) -> np.ndarray:
        """``P(A=a, Z=z, M=m, W=w)`` indexed ``[a, z, m, w]``."""
        return np.einsum("w,aw,zaw,mzaw->azmw", self.pw, self.G, self.Q, self.PM)

    def u_table(self, contrast: Contrast, B: Optional[np.ndarray] = None) -> np.ndarray:
        """``U[z, a, w] = sum_m b(a, z, m, w) p(m | a*, w)``."""
        B = self.b if B is None else B
        return np.einsum("azmw,mw->zaw", B, self.PMA[:, contrast.a_star, :])

    def v_table(self, contrast: Contrast) -> np.ndarray:
        """``V[a, w] = sum_{z,m} b(a', z, m, w) q(z | a', w) p(m | a, w)``."""
        ap = contrast.a_prime
        inner = np.einsum("zmw,zw->mw", self.b[ap], self.Q[:, ap, :])
        return np.einsum("mw,maw->aw", inner, self.PMA)


class TableFn:
    """Callable view of a probability/regression table; the last argument is ``w``."""

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=float)

    def __call__(self, *args):
        *idx, w = args
        idx = [np.asarray(i, dtype=np.int64) for i in idx]
        return self.table[(*idx, w_index(w))]


class ConstFn:
    """A nuisance that ignores ``w`` and depends on at most its leading binary argument."""

    def __init__(self, values, leading: bool = True):
        self.values = np.asarray(values, dtype=float)
        self.leading = leading

    def __call__(self, *args):
        w = np.asarray(args[-1])
        shape = np.broadcast_shapes(*(np.shape(x) for x in args[:-1]), w.shape[:-1])
        if self.leading and self.values.ndim:
            return np.broadcast_to(self.values[np.asarray(args[0], dtype=np.int64)], shape).astype(float)
        return np.full(shape, float(self.values))


# -- sampling ----------------------------------------------------------------


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox4x64 stream (numpy >= 1.17 bit-stream guarantee)."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def sample_dataset(spec: DgpSpec, n: int, seed: Optional[int] = None) -> Dataset:
    """Draw ``n`` observations sequentially ``W1 -> W2 -> W3 -> A -> Z -> M -> Y``.

    One row of seven uniforms is consumed per observation, so a sample of size
    ``n`` is a prefix of any larger sample drawn with the same seed.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return Dataset.empty()
    rng = make_rng(spec.seed if seed is None else seed)
    U = rng.random((n, 7))
    w1 = (U[:, 0] < np.broadcast_to(spec.p_w1(), (n,))).astype(np.int64)
    w2 = (U[:, 1] < spec.p_w2(w1)).astype(np.int64)
    w3 = (U[:, 2] < spec.p_w3(w1, w2)).astype(np.int64)
    a = (U[:, 3] < spec.p_a(w1, w2, w3)).astype(np.int64)
    z = (U[:, 4] < spec.p_z(a, w1, w2, w3)).astype(np.int64)
    m = (U[:, 5] < spec.p_m(z, a, w1, w2, w3)).astype(np.int64)
    y = (U[:, 6] < spec.p_y(m, z, a, w1, w2, w3)).astype(np.float64)
    return Dataset(w=np.column_stack([w1, w2, w3]), a=a, z=z, m=m, y=y)


# -- oracle nuisances -----------------------------------------------------------


def oracle_nuisances(spec: DgpSpec, contrast: Contrast = Contrast(1, 0)) -> NuisanceBundle:
    """Exact ``(b, g, h, q, r, u, v)``; ``u`` and ``v`` are specific to ``contrast``."""
    t = spec.tables
    return NuisanceBundle(
        b=TableFn(t.b),
        g=TableFn(t.G),
        h=TableFn(t.H),
        q=TableFn(t.Q),
        r=TableFn(t.R),
        u=TableFn(t.u_table(contrast)),
        v=TableFn(t.v_table(contrast)),
        provenance={k: "oracle" for k in NUISANCES},
    )


def true_theta(spec: DgpSpec, contrast: Contrast) -> float:
    """``sum_{w,z,m} b(a',z,m,w) q(z|a',w) p(m|a*,w) p(w)`` by direct enumeration."""
    t = spec.tables
    ap, ast = contrast.a_prime, contrast.a_star
    total = np.einsum("zmw,zw,mw,w->", t.b[ap], t.Q[:, ap, :], t.PMA[:, ast, :], t.pw)
    return float(total)


@dataclass(frozen=True)
class Cells:
    """The enumerated support of ``(W, A, Z, M)`` with its probabilities."""

    w: np.ndarray
    a: np.ndarray
    z: np.ndarray
    m: np.ndarray
    prob: np.ndarray
    b: np.ndarray  # true E(Y | cell)


def support_cells(spec: DgpSpec) -> Cells:
    t = spec.tables
    joint = t.joint()
    a, z, m, wc = (x.ravel() for x in np.meshgrid(*(np.arange(s) for s in joint.shape), indexing="ij"))
    return Cells(w=t.W[wc], a=a, z=z, m=m, prob=joint.ravel(), b=t.b.ravel())


def _eif_by_y(spec: DgpSpec, contrast: Contrast, bundle: NuisanceBundle):
    """EIF values at ``y = 0`` and ``y = 1`` on every support cell."""
    cells = support_cells(spec)
    d0 = eif_components(bundle, contrast, cells.a, cells.z, cells.m, cells.w, np.zeros_like(cells.b)).d
    d1 = eif_components(bundle, contrast, cells.a, cells.z, cells.m, cells.w, np.ones_like(cells.b)).d
    return cells, d0, d1


def eif_moments(spec: DgpSpec, contrast: Contrast, bundle: Optional[NuisanceBundle] = None):
    """Exact mean and variance of ``D_eta(O)`` (``Y`` Bernoulli given the cell)."""
    bundle = oracle_nuisances(spec, contrast) if bundle is None else bundle
    cells, d0, d1 = _eif_by_y(spec, contrast, bundle)
    p1 = cells.prob * cells.b
    p0 = cells.prob * (1.0 - cells.b)
    mean = float(np.sum(p0 * d0 + p1 * d1))
    var = float(np.sum(p0 * (d0 - mean) ** 2 + p1 * (d1 - mean) ** 2))
    return mean, var


def efficiency_bound(spec: DgpSpec, contrast: Contrast) -> float:
    return eif_moments(spec, contrast)[1]


def effect_efficiency_bound(spec: DgpSpec, first: Contrast, second: Contrast) -> float:
    """Variance of ``D_first(O) - D_second(O)``: the bound for the difference of the two parameters."""
    cells, a0, a1 = _eif_by_y(spec, first, oracle_nuisances(spec, first))
    _, b0, b1 = _eif_by_y(spec, second, oracle_nuisances(spec, second))
    d0, d1 = a0 - b0, a1 - b1
    p1 = cells.prob * cells.b
    p0 = cells.prob * (1.0 - cells.b)
    mean = np.sum(p0 * d0 + p1 * d1)
    return float(np.sum(p0 * (d0 - mean) ** 2 + p1 * (d1 - mean) ** 2))


def eif_mean_misspec(spec: DgpSpec, contrast: Contrast, bundle: NuisanceBundle) -> float:
    """Exact ``P D_{eta_1}``: the EIF built from ``bundle`` averaged under the true law."""
    cells = support_cells(spec)
    d = eif_components(bundle, contrast, cells.a, cells.z, cells.m, cells.w, cells.b).d
    return float(np.sum(cells.prob * d))


# -- probability limits of misspecified learners --------------------------------


def intercept_limits(spec: DgpSpec) -> Dict[str, float]:
    """Marginal success probabilities: the limits of intercept-only logistic fits."""
    t = spec.tables
    joint = t.joint()
    return {
        "a": float(joint[1].sum()),
        "z": float(joint[:, 1].sum()),
        "y": float(np.sum(joint * t.b)),
    }


def _pseudo_u_mean(spec: DgpSpec, contrast: Contrast) -> float:
    t = spec.tables
    cells = support_cells(spec)
    bundle = oracle_nuisances(spec, contrast)
    c = density_ratio_c(bundle, cells.a, cells.z, cells.m, cells.w, contrast)
    return float(np.sum(cells.prob * cells.b * c))


def _pseudo_v_mean(spec: DgpSpec, contrast: Contrast) -> float:
    t = spec.tables
    ap = contrast.a_prime
    ybar = np.einsum("zmw,zw->mw", t.b[ap], t.Q[:, ap, :])  # [m, w]
    p_mw = t.joint().sum(axis=(0, 1))  # [m, w]
    return float(np.sum(ybar * p_mw))


def misspecified_bundle(
    spec: DgpSpec, contrast: Contrast, wrong: Iterable[str]
) -> NuisanceBundle:
    """Oracle bundle with the components in ``wrong`` set to intercept-only limits.

    Components are replaced independently: ``u`` and ``v`` stay exact unless named.
    """
    wrong = set(wrong)
    unknown = wrong - set(NUISANCES)
    if unknown:
        raise ValueError(f"unknown nuisance(s): {sorted(unknown)}")
    lim = intercept_limits(spec)
    pa = np.array([1.0 - lim["a"], lim["a"]])
    pz = np.array([1.0 - lim["z"], lim["z"]])
    replacements = {
        "b": ConstFn(lim["y"], leading=False),
        "g": ConstFn(pa),
        "h": ConstFn(pa),
        "q": ConstFn(pz),
        "r": ConstFn(pz),
        "u": ConstFn(_pseudo_u_mean(spec, contrast), leading=False) if "u" in wrong else None,
        "v": ConstFn(_pseudo_v_mean(spec, contrast), leading=False) if "v" in wrong else None,
    }
    bundle = oracle_nuisances(spec, contrast)
    new = {k: replacements[k] for k in wrong}
    prov = {k: ("misspecified" if k in wrong else "oracle") for k in NUISANCES}
    return dataclasses.replace(bundle.with_components(**new), provenance=prov)


def scenario_limit_bundle(
    spec: DgpSpec, contrast: Contrast, wrong: Iterable[str]
) -> NuisanceBundle:
    """Probability limit of the cross-fitted bundle when ``wrong`` use intercept-only fits.

    ``u`` and ``v`` are the exact regressions of their pseudo-outcomes built from
    the (possibly misspecified) upstream limits, as a saturated learner would
    converge to.
    """
    wrong = set(wrong)
    base = misspecified_bundle(spec, contrast, wrong - {"u", "v"})
    t = spec.tables
    ap = contrast.a_prime
    # u1(z, a, w) = sum_m b1(a,z,m,w) c1(a,z,m,w) p(m | z, a, w)
    a, z, m, wc = np.meshgrid(np.arange(2), np.arange(2), np.arange(2), np.arange(8), indexing="ij")
    w = t.W[wc]
    pseudo = base.b(a, z, m, w) * density_ratio_c(base, a, z, m, w, contrast)  # [a, z, m, w]
    U = np.einsum("azmw,mzaw->zaw", pseudo, t.PM)
    # v1(a, w) = sum_m p(m | a, w) sum_z b1(a',z,m,w) q1(z|a',w)
    zz, mm, wc2 = np.meshgrid(np.arange(2), np.arange(2), np.arange(8), indexing="ij")
    w2 = t.W[wc2]
    inner = (base.b(ap, zz, mm, w2) * base.q(zz, ap, w2)).sum(axis=0)  # [m, w]
    V = np.einsum("mw,maw->aw", inner, t.PMA)
    prov = dict(base.provenance, u="derived", v="derived")
    return dataclasses.replace(base.with_components(u=TableFn(U), v=TableFn(V)), provenance=prov)


# -- second-order expansion ----------------------------------------------------


@dataclass(frozen=True)
class SecondOrderTerms:
    t_vg: float
    t_bratio: float
    t_uq: float
    t_bq: float

    @property
    def total(self) -> float:
        return self.t_vg + self.t_bratio + self.t_uq + self.t_bq


def second_order_terms(
    spec: DgpSpec, contrast: Contrast, bundle: NuisanceBundle
) -> SecondOrderTerms:
    """Exact decomposition of ``P D_{eta_1} - theta`` into four product-of-errors terms.

    With ``rho = g(a*)/g1(a*)``, ``lam = g(a')/g1(a')``, ``kappa = g(a')/g1(a*)`` and
    ``R = q(z|a')/r(z|a',m) * h(a*|m)/h(a'|m)`` (per ``w``):

    * ``t_vg``     = E_W (v1 - v)(a*) (1 - rho)
    * ``t_bratio`` = E_W kappa sum_{z,m} (R1 - R)(b - b1) p(m, z | a')
    * ``t_uq``     = E_W sum_z {lam (u - u1)(z, a') + (rho - lam) u(z, a')} (q1 - q)(z | a')
    * ``t_bq``     = E_W kappa sum_{z,m} R (b1 - b)(q1 - q)(z | a') p(m | z, a')

    The ``(rho - lam) u`` piece is a (g error) x (q error) product; it vanishes
    whenever ``g1 = g`` or ``q1 = q``.
    """
    t = spec.tables
    truth = oracle_nuisances(spec, contrast)
    ap, ast = contrast.a_prime, contrast.a_star
    W = t.W
    pw = t.pw

    g_ap, g_as = t.G[ap], t.G[ast]
    g1_ap, g1_as = bundle.g(ap, W), bundle.g(ast, W)
    rho, lam, kappa = g_as / g1_as, g_ap / g1_ap, g_ap / g1_as

    t_vg = np.sum(pw * (bundle.v(ast, W) - truth.v(ast, W)) * (1.0 - rho))

    z, m, wc = np.meshgrid(np.arange(2), np.arange(2), np.arange(8), indexing="ij")
    w = W[wc]

    def ratio(bd):
        return bd.q(z, ap, w) / bd.r(z, ap, m, w) * bd.h(ast, m, w) / bd.h(ap, m, w)

    R, R1 = ratio(truth), ratio(bundle)
    b, b1 = truth.b(ap, z, m, w), bundle.b(ap, z, m, w)
    q, q1 = truth.q(z, ap, w), bundle.q(z, ap, w)
    pm = t.PM[m, z, ap, wc]  # p(m | z, a', w)

    t_bratio = np.sum(pw * kappa * ((R1 - R) * (b - b1) * pm * q).sum(axis=(0, 1)))
    t_bq = np.sum(pw * kappa * (R * (b1 - b) * (q1 - q) * pm).sum(axis=(0, 1)))

    zz, wz = np.meshgrid(np.arange(2), np.arange(8), indexing="ij")
    wzz = W[wz]
    u, u1 = truth.u(zz, ap, wzz), bundle.u(zz, ap, wzz)
    dq = bundle.q(zz, ap, wzz) - truth.q(zz, ap, wzz)
    t_uq = np.sum(pw * ((lam * (u - u1) + (rho - lam) * u) * dq).sum(axis=0))

    return SecondOrderTerms(float(t_vg), float(t_bratio), float(t_uq), float(t_bq))


# -- general (Theorem-form) EIF and the high-dimensional-Z parameterization -----


def general_eif(spec: DgpSpec, contrast: Contrast, a, z, m, w, y) -> np.ndarray:
    """EIF in its density form: mediator densities and integrals written as finite sums.

    Used only to cross-check the production (binary-``Z`` score) form.
    """
    t = spec.tables
    ap, ast = contrast.a_prime, contrast.a_star
    a, z, m, y = (np.asarray(x) for x in (a, z, m, y))
    wc = w_index(w)
    g = t.G
    c = t.PMA[m, ast, wc] / t.PM[m, z, ap, wc]  # c(a', z, m, w)
    b_obs = t.b[ap, z, m, wc]
    U = t.u_table(contrast)
    V = t.v_table(contrast)
    u_mean = U[0, ap, wc] * t.Q[0, ap, wc] + U[1, ap, wc] * t.Q[1, ap, wc]
    b_int = t.b[ap, 0, m, wc] * t.Q[0, ap, wc] + t.b[ap, 1, m, wc] * t.Q[1, ap, wc]
    ind_ap = (a == ap).astype(float)
    ind_as = (a == ast).astype(float)
    return (
        ind_ap / g[ap, wc] * c * (y - b_obs)
        + ind_ap / g[ap, wc] * (U[z, ap, wc] - u_mean)
        + ind_as / g[ast, wc] * (b_int - V[ast, wc])
        + V[ast, wc]
    )


@dataclass(frozen=True)
class AltNuisanceBundle:
    """Nuisances of the parameterization suited to a high-dimensional ``Z``.

    ``q_m(m, a, w) = p(m | a, w)``, ``r_m(m, z, a, w) = p(m | z, a, w)``,
    ``d(a, z, m, w) = p(z | a, w) / p(z | a, m, w)``,
    ``u_m(m, a, w) = E{b d | M=m, A=a, W=w}`` and
    ``v_m(a, w) = E{sum_m b(a', Z, m, W) q_m(m | a*, W) | A=a, W=w}``.
    """

    q_m: Callable
    r_m: Callable
    d: Callable
    u_m: Callable
    v_m: Callable
    d_bayes: Callable  # the same ratio computed through h, g, q_m, r_m


def alt_oracle_nuisances(spec: DgpSpec, contrast: Contrast) -> AltNuisanceBundle:
    t = spec.tables
    ast, ap = contrast.a_star, contrast.a_prime
    # d(a, z, m, w) = p(z | a, w) / p(z | a, m, w)
    D = t.Q[:, :, None, :] / t.R  # [z, a, m, w]
    D = np.transpose(D, (1, 0, 2, 3))  # [a, z, m, w]
    # second form: h(a|m,w)/h(a*|m,w) * g(a*|w)/g(a|w) * q_m(m|a*,w)/r_m(m|a,z,w)
    H, G, PMA, PM = t.H, t.G, t.PMA, t.PM
    a, z, m, wc = np.meshgrid(np.arange(2), np.arange(2), np.arange(2), np.arange(8), indexing="ij")
    D2 = H[a, m, wc] / H[ast, m, wc] * G[ast, wc] / G[a, wc] * PMA[m, ast, wc] / PM[m, z, a, wc]
    # u_m(m, a, w) = sum_z r(z | a, m, w) b(a, z, m, w) d(a, z, m, w)
    UM = np.einsum("zamw,azmw,azmw->maw", t.R, t.b, D)
    # v_m(a, w) = sum_z q(z | a, w) sum_m b(a', z, m, w) p(m | a*, w)
    inner = np.einsum("zmw,mw->zw", t.b[ap], PMA[:, ast, :])
    VM = np.einsum("zaw,zw->aw", t.Q, inner)
    return AltNuisanceBundle(
        q_m=TableFn(PMA),
        r_m=TableFn(PM),
        d=TableFn(D),
        u_m=TableFn(UM),
        v_m=TableFn(VM),
        d_bayes=TableFn(D2),
    )


def alt_eif_value(spec: DgpSpec, contrast: Contrast, o, alt: Optional[AltNuisanceBundle] = None) -> float:
    """EIF at one observation via the high-dimensional-``Z`` parameterization.

    ``o`` needs attributes ``w, a, z, m, y``. Treatment levels other than
    ``a'`` and ``a*`` contribute only the ``v_m(a', w)`` term.
    """
    alt = alt_oracle_nuisances(spec, contrast) if alt is None else alt
    t = spec.tables
    ap, ast = contrast.a_prime, contrast.a_star
    w = np.asarray(o.w)
    wc = int(w_index(w))
    value = float(alt.v_m(ap, w))
    if o.a == ap:
        c = t.PMA[o.m, ast, wc] / t.PM[o.m, o.z, ap, wc]
        b_obs = t.b[ap, o.z, o.m, wc]
        integral = sum(t.b[ap, o.z, mm, wc] * alt.q_m(mm, ast, w) for mm in (0, 1))
        value += (c * (o.y - b_obs) + integral - alt.v_m(ap, w)) / t.G[ap, wc]
    if o.a == ast:
        integral = sum(alt.u_m(mm, ap, w) * alt.q_m(mm, ast, w) for mm in (0, 1))
        value += (alt.u_m(o.m, ap, w) - integral) / t.G[ast, wc]
    return float(value)


def all_observation_cells(spec: DgpSpec):
    """Every ``(w, a, z, m, y)`` in the support, as plain tuples."""
    for w in spec.tables.W:
        for a, z, m, y in itertools.product((0, 1), repeat=4):
            yield tuple(int(x) for x in w), a, z, m, float(y)


def random_bundle(
    spec: DgpSpec, contrast: Contrast, rng: np.random.Generator, scale: float = 1.0
) -> NuisanceBundle:
    """Oracle bundle with every component perturbed at random on the logit scale.

    Binary pmfs stay normalized (``g`` over ``a``, ``q`` and ``r`` over ``z``,
    ``h`` over ``a``); ``u`` and ``v`` get independent multiplicative noise.
    """
    t = spec.tables

    def perturb(p1):
        p1 = np.clip(p1, 1e-12, 1 - 1e-12)
        eta = np.log(p1 / (1 - p1)) + scale * rng.standard_normal(p1.shape)
        return 1.0 / (1.0 + np.exp(-eta))

    g1 = perturb(t.G[1])
    q1 = perturb(t.Q[1])
    h1 = perturb(t.H[1])
    r1 = perturb(t.R[1])
    U = t.u_table(contrast) * np.exp(0.5 * scale * rng.standard_normal((2, 2, 8)))
    V = t.v_table(contrast) * np.exp(0.5 * scale * rng.standard_normal((2, 8)))
    return NuisanceBundle(
        b=TableFn(perturb(t.b)),
        g=TableFn(np.stack([1 - g1, g1])),
        h=TableFn(np.stack([1 - h1, h1])),
        q=TableFn(np.stack([1 - q1, q1])),
        r=TableFn(np.stack([1 - r1, r1])),
        u=TableFn(U),
        v=TableFn(V),
        provenance={k: "random" for k in NUISANCES},
    )
