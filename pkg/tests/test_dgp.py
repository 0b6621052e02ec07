"""Enumeration oracle: frozen regression constants and independent brute-force checks."""

import itertools
import math

import numpy as np
import pytest

from intmed.core import Contrast, Observation
from intmed.dgp import (
    DgpSpec,
    all_observation_cells,
    alt_eif_value,
    alt_oracle_nuisances,
    efficiency_bound,
    eif_mean_misspec,
    eif_moments,
    general_eif,
    intercept_limits,
    misspecified_bundle,
    oracle_nuisances,
    random_bundle,
    sample_dataset,
    scenario_limit_bundle,
    second_order_terms,
    support_cells,
    true_theta,
)
from intmed.eif import eif_components

from conftest import C00, C10, C11

# regression constants from the enumeration oracle
THETA = {C10: 0.5126841332213551, C11: 0.546492177749538, C00: 0.5014566440990463, Contrast(0, 1): 0.5370764755032819}
SIGMA2 = {C10: 0.7488066117113084, C11: 0.5348755010346853, C00: 1.4823491569701188}
P_A1, P_Z1, P_Y1 = 0.7226350330813507, 0.6726081325545059, 0.5376623004878212
MISS_Q_GAP = -0.03694592472062164
VBU_GAP = 0.008956508213097014


def _expit_printed(x):
    return 1.0 / (1.0 + math.exp(x))


def _bern(p, x):
    return p if x == 1 else 1.0 - p


def _brute_theta(ap, ast):
    """Plain-loop enumeration written directly from the structural equations."""
    total = 0.0
    for w1, w2, w3 in itertools.product((0, 1), repeat=3):
        s = w1 + w2 + w3
        pw = _bern(0.6, w1) * _bern(0.3, w2) * _bern(0.2 + (w1 + w2) / 3, w3)

        def pz(z, a):
            return _bern(_expit_printed(s / 3 - a - a * w3 - 0.25), z)

        def pm(m, z, a):
            return _bern(_expit_printed(w1 + w2 + a - z + a * z - 0.3 * a * w2), m)

        for z, m in itertools.product((0, 1), repeat=2):
            b = _expit_printed((ap - z + m - ap * z) / (s + 1))
            pm_star = sum(pm(m, zz, ast) * pz(zz, ast) for zz in (0, 1))
            total += pw * b * pz(z, ap) * pm_star
    return total


@pytest.mark.parametrize("contrast", list(THETA))
def test_true_theta_matches_brute_force(dgp, contrast):
    assert true_theta(dgp, contrast) == pytest.approx(_brute_theta(contrast.a_prime, contrast.a_star), abs=1e-14)


@pytest.mark.parametrize("contrast", list(THETA))
def test_true_theta_frozen(dgp, contrast):
    assert true_theta(dgp, contrast) == pytest.approx(THETA[contrast], abs=1e-14)


@pytest.mark.parametrize("contrast", list(SIGMA2))
def test_efficiency_bound_frozen(dgp, contrast):
    assert efficiency_bound(dgp, contrast) == pytest.approx(SIGMA2[contrast], abs=1e-12)


@pytest.mark.parametrize("contrast", [C10, C11, C00])
def test_eif_mean_is_theta(dgp, contrast):
    mean, _ = eif_moments(dgp, contrast)
    assert abs(mean - true_theta(dgp, contrast)) < 1e-12


def test_theta_is_mean_of_v_at_astar(dgp):
    t = dgp.tables
    v = oracle_nuisances(dgp, C10).v(0, t.W)
    assert abs(np.sum(t.pw * v) - true_theta(dgp, C10)) < 1e-12


def test_constant_outcome_hook_gives_constant_theta():
    spec = DgpSpec(p_y=lambda m, z, a, w1, w2, w3: 0.5 + 0 * (m + z + a + w1))
    for c in (C10, C11, C00, Contrast(0, 1)):
        assert true_theta(spec, c) == pytest.approx(0.5, abs=1e-15)


def test_deterministic_outcome_has_zero_bound():
    spec = DgpSpec(p_y=lambda m, z, a, w1, w2, w3: 1.0 + 0 * (m + z + a + w1))
    assert efficiency_bound(spec, C10) == pytest.approx(0.0, abs=1e-20)


def test_q_is_printed_z_equation(dgp):
    q = oracle_nuisances(dgp).q
    for w in itertools.product((0, 1), repeat=3):
        for a in (0, 1):
            expected = _expit_printed(sum(w) / 3 - a - a * w[2] - 0.25)
            assert q(1, a, np.array(w)) == pytest.approx(expected, abs=1e-15)


def test_h_normalizes(dgp):
    h = oracle_nuisances(dgp).h
    W = dgp.tables.W
    for m in (0, 1):
        np.testing.assert_allclose(h(0, m, W) + h(1, m, W), 1.0, atol=1e-15)


def test_r_bayes_inversion_two_routes(dgp):
    t = dgp.tables
    w = (1, 1, 1)
    s = sum(w)

    def pz(z, a):
        return _bern(_expit_printed(s / 3 - a - a * w[2] - 0.25), z)

    def pm(m, z, a):
        return _bern(_expit_printed(w[0] + w[1] + a - z + a * z - 0.3 * a * w[1]), m)

    expected = pz(1, 1) * pm(1, 1, 1) / sum(pz(zz, 1) * pm(1, zz, 1) for zz in (0, 1))
    r = oracle_nuisances(dgp).r(1, 1, 1, np.array(w))
    assert r == pytest.approx(expected, abs=1e-15)
    # second route: from the joint table
    joint = t.joint()[1, :, 1, 7]
    assert r == pytest.approx(joint[1] / joint.sum(), abs=1e-15)


def test_intercept_limits_frozen(dgp):
    lim = intercept_limits(dgp)
    assert lim["a"] == pytest.approx(P_A1, abs=1e-15)
    assert lim["z"] == pytest.approx(P_Z1, abs=1e-15)
    assert lim["y"] == pytest.approx(P_Y1, abs=1e-15)


def test_marginal_a_two_routes(dgp):
    brute = 0.0
    for w1, w2, w3 in itertools.product((0, 1), repeat=3):
        pw = _bern(0.6, w1) * _bern(0.3, w2) * _bern(0.2 + (w1 + w2) / 3, w3)
        brute += pw * _expit_printed(0.25 * (w1 + w2 + w3) + 3 * w1 * w2 - 2)
    assert brute == pytest.approx(P_A1, abs=1e-15)


# -- sampling -----------------------------------------------------------------


def test_sample_empty(dgp):
    assert sample_dataset(dgp, 0, seed=1).n == 0


def test_sample_marginals_large_n(dgp):
    d = sample_dataset(dgp, 100_000, seed=7)
    assert abs(d.w[:, 0].mean() - 0.6) < 3 * math.sqrt(0.6 * 0.4 / 1e5)
    assert abs(d.a.mean() - P_A1) < 3 * math.sqrt(P_A1 * (1 - P_A1) / 1e5)


def test_sample_is_deterministic_and_prefix_stable(dgp):
    big = sample_dataset(dgp, 500, seed=42)
    assert sample_dataset(dgp, 500, seed=42) == big
    assert sample_dataset(dgp, 120, seed=42) == big.subset(np.arange(120))
    assert sample_dataset(dgp, 500, seed=43) != big


def test_sample_bit_stream_frozen(dgp):
    # Philox4x64 stream; any change to draw order or generator shows up here
    frozen = (
        "w1,w2,w3,a,z,m,y\n1,1,1,0,0,0,0.0\n1,0,1,1,1,0,0.0\n0,0,0,1,1,0,1.0\n"
        "0,1,1,1,0,0,0.0\n0,0,0,1,1,0,1.0\n1,1,0,1,1,0,0.0\n"
    )
    assert sample_dataset(dgp, 6, seed=2026).to_csv() == frozen


def test_spec_rejects_degenerate_mechanism():
    with pytest.raises(ValueError):
        DgpSpec(p_a=lambda w1, w2, w3: 0.0 * w1)


# -- multiple robustness and second-order terms ----------------------------------


def test_oracle_bundle_eif_mean(dgp):
    assert abs(eif_mean_misspec(dgp, C10, oracle_nuisances(dgp, C10)) - THETA[C10]) < 1e-12


def test_only_g_wrong_is_harmless(dgp):
    b = misspecified_bundle(dgp, C10, {"g"})
    assert abs(eif_mean_misspec(dgp, C10, b) - THETA[C10]) < 1e-10


def test_miss_q_limit_is_biased(dgp):
    gap = eif_mean_misspec(dgp, C10, scenario_limit_bundle(dgp, C10, {"q"})) - THETA[C10]
    assert abs(gap) > 1e-6
    assert gap == pytest.approx(MISS_Q_GAP, abs=1e-14)


@pytest.mark.parametrize("wrong", ["b", "g", "h", "r"])
def test_single_component_scenario_limits_are_consistent(dgp, wrong):
    gap = eif_mean_misspec(dgp, C10, scenario_limit_bundle(dgp, C10, {wrong})) - THETA[C10]
    assert abs(gap) < 1e-12


def test_v_b_u_configuration_gap_is_g_times_q(dgp):
    """With v, b, u exact the remainder is a (g error) x (q error) product."""
    wrong = {"g", "q", "h", "r"}
    gap = eif_mean_misspec(dgp, C10, misspecified_bundle(dgp, C10, wrong)) - THETA[C10]
    assert gap == pytest.approx(VBU_GAP, abs=1e-14)
    assert second_order_terms(dgp, C10, misspecified_bundle(dgp, C10, wrong)).total == pytest.approx(gap, abs=1e-14)
    for fixed in ("g", "q"):
        b = misspecified_bundle(dgp, C10, wrong - {fixed})
        assert abs(eif_mean_misspec(dgp, C10, b) - THETA[C10]) < 1e-12


def test_second_order_zero_at_truth(dgp):
    t = second_order_terms(dgp, C10, oracle_nuisances(dgp, C10))
    assert (t.t_vg, t.t_bratio, t.t_uq, t.t_bq) == (0.0, 0.0, 0.0, 0.0)


def test_second_order_only_v_wrong(dgp):
    t = second_order_terms(dgp, C10, misspecified_bundle(dgp, C10, {"v"}))
    assert t.t_vg == 0.0 and abs(t.total) < 1e-15


@pytest.mark.parametrize("contrast", [C10, C11, C00])
def test_second_order_identity_random(dgp, contrast):
    rng = np.random.default_rng(5)
    for _ in range(10):
        b = random_bundle(dgp, contrast, rng)
        gap = eif_mean_misspec(dgp, contrast, b) - true_theta(dgp, contrast)
        assert second_order_terms(dgp, contrast, b).total == pytest.approx(gap, abs=1e-12)


# -- alternative EIF forms ----------------------------------------------------


@pytest.mark.parametrize("contrast", [C10, C11, C00])
def test_density_form_matches_score_form(dgp, contrast):
    cells = support_cells(dgp)
    bundle = oracle_nuisances(dgp, contrast)
    for y in (0.0, 1.0):
        yy = np.full(cells.a.shape, y)
        a = general_eif(dgp, contrast, cells.a, cells.z, cells.m, cells.w, yy)
        b = eif_components(bundle, contrast, cells.a, cells.z, cells.m, cells.w, yy).d
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("contrast", [C10, C11, C00])
def test_alternate_eif_pointwise_and_mean(dgp, contrast):
    bundle = oracle_nuisances(dgp, contrast)
    t = dgp.tables
    mean = 0.0
    for w, a, z, m, y in all_observation_cells(dgp):
        o = Observation(w=w, a=a, z=z, m=m, y=y)
        alt = alt_eif_value(dgp, contrast, o)
        prim = float(eif_components(bundle, contrast, a, z, m, np.array(w), y).d)
        assert abs(alt - prim) < 1e-10
        wc = w[0] * 4 + w[1] * 2 + w[2]
        p = t.joint()[a, z, m, wc] * (t.b[a, z, m, wc] if y == 1 else 1 - t.b[a, z, m, wc])
        mean += p * alt
    assert abs(mean - true_theta(dgp, contrast)) < 1e-12


def test_alternate_eif_third_treatment_level(dgp):
    class Obs:
        w, a, z, m, y = (1, 0, 1), 2, 1, 0, 1.0

    alt = alt_oracle_nuisances(dgp, C10)
    assert alt_eif_value(dgp, C10, Obs(), alt) == pytest.approx(float(alt.v_m(1, np.array(Obs.w))))


def test_alternate_ratio_two_routes(dgp):
    alt = alt_oracle_nuisances(dgp, C10)
    np.testing.assert_allclose(alt.d.table, alt.d_bayes.table, rtol=1e-13)
