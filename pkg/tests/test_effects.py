import numpy as np
import pytest

from intmed.core import BadAlpha, EstimateReport
from intmed.dgp import DgpSpec, expit, oracle_nuisances, sample_dataset, true_theta, effect_efficiency_bound
from intmed.effects import DECOMPOSITION, decompose_effects, difference_report, true_effects
from intmed.estimators import CrossFit
from intmed.inference import make_report, normal_quantile, wald_ci
from intmed.learners import NuisanceConfig

from conftest import C00, C10, C11


@pytest.mark.parametrize("kind", ["onestep", "onestep_stabilized", "tmle"])
def test_decomposition_is_exact(dgp, kind):
    d = sample_dataset(dgp, 600, seed=1)
    e = decompose_effects(d, NuisanceConfig(), kind, seed=1)
    assert e.indirect.theta_hat + e.direct.theta_hat - e.total.theta_hat == 0.0
    np.testing.assert_array_equal(e.indirect.eif + e.direct.eif, e.total.eif)
    assert e.indirect.theta_hat == e.thetas[C11].theta_hat - e.thetas[C10].theta_hat
    assert e.direct.theta_hat == e.thetas[C10].theta_hat - e.thetas[C00].theta_hat


def test_contrasts_share_folds_and_base_fits(dgp):
    d = sample_dataset(dgp, 300, seed=2)
    fits = CrossFit.fit(d, NuisanceConfig(), seed=2)
    decompose_effects(d, fits.cfg, "onestep", fits=fits)
    assert set(fits._bundles) == set(DECOMPOSITION)
    for j in range(fits.folds.J):
        bs = [fits._bundles[c][j] for c in DECOMPOSITION]
        assert all(b.b is bs[0].b and b.q is bs[0].q for b in bs)
        assert bs[0].u is not bs[1].u


def test_oracle_indirect_within_four_sd(dgp):
    d = sample_dataset(dgp, 5000, seed=3)
    e = decompose_effects(d, NuisanceConfig.oracle(), "onestep", seed=3, oracle=lambda c: oracle_nuisances(dgp, c))
    truth = true_effects(dgp)["indirect"]
    sd = np.sqrt(effect_efficiency_bound(dgp, C11, C10) / d.n)
    assert abs(e.indirect.theta_hat - truth) < 4 * sd


def test_no_mediation_through_treatment():
    spec = DgpSpec(p_m=lambda z, a, w1, w2, w3: expit(w1 + w2 + 0 * (z + a) - 0.5))
    assert true_effects(spec)["indirect"] == pytest.approx(0.0, abs=1e-15)
    est = []
    for seed in range(20):
        d = sample_dataset(spec, 2000, seed=seed)
        est.append(decompose_effects(d, NuisanceConfig(), "tmle", seed=seed).indirect.theta_hat)
    est = np.array(est)
    assert abs(est.mean()) < 4 * est.std(ddof=1) / np.sqrt(len(est))


def test_true_effects_telescoping(dgp):
    e = true_effects(dgp)
    assert e["indirect"] + e["direct"] == e["total"]
    assert e["total"] == pytest.approx(true_theta(dgp, C11) - true_theta(dgp, C00), abs=1e-15)


def test_difference_variance_is_not_sum_of_variances():
    rng = np.random.default_rng(0)
    x = rng.normal(size=1000)
    y = x + 0.1 * rng.normal(size=1000)
    rx, ry = make_report(x.mean(), x, "onestep"), make_report(y.mean(), y, "onestep")
    diff = difference_report(rx, ry)
    assert diff.sigma2_hat == pytest.approx(np.var(x - y))
    assert diff.sigma2_hat < 0.05 * (rx.sigma2_hat + ry.sigma2_hat)


def test_difference_requires_eif():
    r = EstimateReport(0.1, 1.0, 10, {}, "onestep")
    with pytest.raises(ValueError):
        difference_report(r, r)


def test_wald_degenerate():
    assert wald_ci(0.4, 0.0, 100, 0.05) == (0.4, 0.4)


@pytest.mark.parametrize("alpha,z", [(0.05, 1.959964), (0.01, 2.575829)])
def test_wald_quantiles(alpha, z):
    lo, hi = wald_ci(0.0, 4.0, 100, alpha)
    assert (hi - lo) / 2 == pytest.approx(z * 0.2, abs=1e-5)


def test_normal_quantile_precision():
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-12)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 2.0])
def test_bad_alpha(alpha):
    with pytest.raises(BadAlpha):
        wald_ci(0.0, 1.0, 10, alpha)


def test_effect_report_json(dgp):
    import json

    d = sample_dataset(dgp, 300, seed=4)
    doc = json.loads(json.dumps(decompose_effects(d, NuisanceConfig(), "onestep").to_dict()))
    assert set(doc) == {"indirect", "direct", "total", "thetas"}
    assert set(doc["thetas"]) == {"theta(1,1)", "theta(1,0)", "theta(0,0)"}
