"""Efficient influence function for the interventional mediation parameter (binary ``Z``).

The production path uses the score form

    D(o) = Hy (y - b(a', z, m, w))            # outcome score
         + Hz (z - q(1 | a', w))              # confounder score
         + Hm (sum_z b(a', z, m, w) q(z | a', w) - v(a*, w))   # mediator score
         + v(a*, w)

with ``Hy = 1{a=a'} c(a', z, m, w) / g(a'|w)``,
``Hz = 1{a=a'} {u(1, a', w) - u(0, a', w)} / g(a'|w)`` and ``Hm = 1{a=a*} / g(a*|w)``.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Literal, Sequence

import numpy as np

from .core import (
    Contrast,
    DegenerateWeights,
    EifScores,
    FoldAssignment,
    FoldMismatch,
    NuisanceBundle,
    TooFewObservations,
)


def density_ratio_c(bundle: NuisanceBundle, a, z, m, w, contrast: Contrast) -> np.ndarray:
    """``p(m | a*, w) / p(m | a, z, w)`` written without any mediator density:

    ``g(a|w)/g(a*|w) * q(z|a,w)/r(z|a,m,w) * h(a*|m,w)/h(a|m,w)``.
    """
    ast = contrast.a_star
    return (
        bundle.g(a, w) / bundle.g(ast, w)
        * bundle.q(z, a, w) / bundle.r(z, a, m, w)
        * bundle.h(ast, m, w) / bundle.h(a, m, w)
    )


def stripped_ratio(bundle: NuisanceBundle, a, z, m, w, contrast: Contrast) -> np.ndarray:
    """``c`` without its treatment-propensity factor: ``q/r * h(a*|m,w)/h(a|m,w)``.

    ``1{a=a'}/g(a*|w) * stripped_ratio`` equals ``1{a=a'}/g(a'|w) * c`` identically.
    """
    ast = contrast.a_star
    return bundle.q(z, a, w) / bundle.r(z, a, m, w) * bundle.h(ast, m, w) / bundle.h(a, m, w)


def outcome_weight(
    bundle: NuisanceBundle,
    contrast: Contrast,
    z,
    m,
    w,
    form: Literal["score", "printed"] = "score",
) -> np.ndarray:
    """Weight on ``y - b`` for a row with ``A = a'`` (the outcome clever covariate).

    ``form="score"`` uses ``c / g(a'|w)``; ``form="printed"`` uses
    ``stripped_ratio / g(a*|w)``. The two agree exactly.
    """
    ap = contrast.a_prime
    if form == "score":
        return density_ratio_c(bundle, ap, z, m, w, contrast) / bundle.g(ap, w)
    if form == "printed":
        return stripped_ratio(bundle, ap, z, m, w, contrast) / bundle.g(contrast.a_star, w)
    raise ValueError(f"unknown form {form!r}")


def mediator_pseudo_outcome(bundle: NuisanceBundle, contrast: Contrast, m, w) -> np.ndarray:
    """``sum_z b(a', z, m, w) q(z | a', w)``."""
    ap = contrast.a_prime
    return bundle.b(ap, 1, m, w) * bundle.q(1, ap, w) + bundle.b(ap, 0, m, w) * bundle.q(0, ap, w)


def eif_components(bundle: NuisanceBundle, contrast: Contrast, a, z, m, w, y) -> EifScores:
    """Score components of ``D_eta`` at the given points (all arguments vectorized)."""
    ap, ast = contrast.a_prime, contrast.a_star
    a, z, m, y = (np.asarray(x) for x in (a, z, m, y))
    ind_ap = (a == ap).astype(float)
    ind_as = (a == ast).astype(float)

    hy = ind_ap * outcome_weight(bundle, contrast, z, m, w)
    term_y = hy * (y - bundle.b(ap, z, m, w))
    hz = ind_ap / bundle.g(ap, w) * (bundle.u(1, ap, w) - bundle.u(0, ap, w))
    term_z = hz * (z - bundle.q(1, ap, w))
    v_as = np.broadcast_to(bundle.v(ast, w), term_y.shape).astype(float)
    term_m = ind_as / bundle.g(ast, w) * (mediator_pseudo_outcome(bundle, contrast, m, w) - v_as)
    return EifScores(term_y=term_y, term_z=term_z, term_m=term_m, v_at_astar=v_as)


def _check_folds(data, bundles: Sequence[NuisanceBundle], folds: FoldAssignment):
    if folds.n != data.n:
        raise FoldMismatch(f"fold assignment covers {folds.n} rows, data has {data.n}")
    if len(bundles) < folds.J or (folds.n and folds.fold_of.max() >= len(bundles)):
        raise FoldMismatch(f"{len(bundles)} bundles for {folds.J} folds")


def _per_fold(data, bundles, folds, fn):
    """Evaluate ``fn(bundle, rows)`` on each validation fold and scatter into row order."""
    out = None
    for j in range(folds.J):
        rows = folds.validation(j)
        if rows.size == 0:
            continue
        vals = fn(bundles[j], rows)
        if out is None:
            out = [np.empty(data.n) for _ in vals]
        for o, v in zip(out, vals):
            o[rows] = v
    return out


def eif_scores(data, bundles: Sequence[NuisanceBundle], folds: FoldAssignment, contrast: Contrast) -> EifScores:
    """Cross-fitted EIF: row ``i`` is scored with the bundle trained without its fold."""
    _check_folds(data, bundles, folds)

    def score(bundle, rows):
        s = eif_components(
            bundle, contrast, data.a[rows], data.z[rows], data.m[rows], data.w[rows], data.y[rows]
        )
        return s.term_y, s.term_z, s.term_m, s.v_at_astar

    ty, tz, tm, va = _per_fold(data, bundles, folds, score)
    return EifScores(term_y=ty, term_z=tz, term_m=tm, v_at_astar=va)


def stabilization_factors(
    data,
    bundles: Sequence[NuisanceBundle],
    folds: FoldAssignment,
    contrast: Contrast,
    c_star: Literal["plain", "stripped"] = "plain",
):
    """Empirical means of the three inverse weights ``(mean_hy, mean_ha, mean_hm)``.

    ``c_star="plain"`` weights the outcome term by ``c``; ``"stripped"`` by
    :func:`stripped_ratio` (no propensity factor).
    """
    _check_folds(data, bundles, folds)
    ap, ast = contrast.a_prime, contrast.a_star
    ratio = density_ratio_c if c_star == "plain" else stripped_ratio

    def weights(bundle, rows):
        a, z, m, w = data.a[rows], data.z[rows], data.m[rows], data.w[rows]
        ind_ap = (a == ap).astype(float)
        ind_as = (a == ast).astype(float)
        inv_g_ap = ind_ap / bundle.g(ap, w)
        return (
            inv_g_ap * ratio(bundle, ap, z, m, w, contrast),
            inv_g_ap,
            ind_as / bundle.g(ast, w),
        )

    wy, wa, wm = _per_fold(data, bundles, folds, weights)
    return float(wy.mean()), float(wa.mean()), float(wm.mean())


def stabilize(
    scores: EifScores,
    data,
    bundles: Sequence[NuisanceBundle],
    folds: FoldAssignment,
    contrast: Contrast,
    c_star: Literal["plain", "stripped"] = "plain",
) -> EifScores:
    """Divide each inverse-weighted score by the empirical mean of its weight."""
    means = stabilization_factors(data, bundles, folds, contrast, c_star)
    if min(means) <= 0.0:
        raise DegenerateWeights(
            f"stabilization divisors {means}: no observation at one of the contrast levels"
        )
    mean_hy, mean_ha, mean_hm = means
    return replace(
        scores,
        term_y=scores.term_y / mean_hy,
        term_z=scores.term_z / mean_ha,
        term_m=scores.term_m / mean_hm,
    )


def eif_variance(scores) -> float:
    """Empirical variance (``1/n``) of the per-observation EIF values.

    Accepts :class:`EifScores` or a plain array of ``d`` values.
    """
    d = scores.d if isinstance(scores, EifScores) else np.asarray(scores, dtype=float)
    if d.shape[0] < 2:
        raise TooFewObservations("need at least two observations for a variance")
    return float(np.mean((d - d.mean()) ** 2))
