import numpy as np
import pytest

from ganmpc import margins, models, svr
from ganmpc.errors import ConfigError
from ganmpc.nmpc import HorizonSolution


def model_with_svs(svs, coefs=None, bias=0.0, gamma=1.0):
    svs = np.atleast_2d(np.asarray(svs, dtype=float))
    coefs = np.ones(svs.shape[0]) if coefs is None else np.asarray(coefs, dtype=float)
    return svr.SvrModel(svs, coefs, bias, gamma, 1.0, 0.1)


def cfg(beta=(10.0,), eta=0.5, eps=0.4, nu=100, xi=10):
    return margins.BsmConfig(beta=np.array(beta), eta=eta, epsilon=eps, nu=nu, xi=xi)


# ---------------------------------------------------------------------------
# confidence
# ---------------------------------------------------------------------------

def test_confidence_single_sv_distance_two():
    m = model_with_svs([[2.0, 0.0]])
    assert margins.confidence(m, np.zeros(2)) == pytest.approx(0.5)


def test_confidence_two_svs_distances_one_and_three():
    m = model_with_svs([[1.0, 0.0], [-3.0, 0.0]])
    assert margins.confidence(m, np.zeros(2)) == pytest.approx(0.25)


def test_confidence_coincident_svs_capped():
    m = model_with_svs([[1.0, 1.0], [1.0, 1.0]])
    assert margins.confidence(m, np.array([1.0, 1.0])) == margins.CONFIDENCE_CAP


def test_confidence_decreases_radially():
    rng = np.random.default_rng(0)
    svs = rng.normal(size=(8, 3))
    m = model_with_svs(svs)
    centroid = svs.mean(axis=0)
    direction = np.array([1.0, -0.5, 0.25])
    values = [margins.confidence(m, centroid + s * direction) for s in np.linspace(1, 8, 10)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_overall_confidence():
    assert margins.overall_confidence([0.3, 0.3, 0.3]) == pytest.approx(0.3)
    assert margins.overall_confidence([0.2, 0.4]) == pytest.approx(0.3)
    rng = np.random.default_rng(1)
    vals = rng.uniform(0, 1, 6)
    assert margins.overall_confidence(vals) == pytest.approx(
        margins.overall_confidence(vals[::-1]))


# ---------------------------------------------------------------------------
# margin selection (case split)
# ---------------------------------------------------------------------------

def test_select_margin_improving_and_confident():
    c = cfg()
    psi = margins.select_margin(np.array([2.0]), 0.9, j_prev1=1.0, j_prev2=2.0, cfg=c)
    np.testing.assert_array_equal(psi.widths, [2.0])


def test_select_margin_low_confidence_gives_beta():
    c = cfg()
    psi = margins.select_margin(np.array([2.0]), 0.5, j_prev1=0.01, j_prev2=0.02, cfg=c)
    np.testing.assert_array_equal(psi.widths, c.beta)
    # regardless of how good the costs are
    psi = margins.select_margin(np.array([0.1]), 0.0, j_prev1=0.0, j_prev2=0.0, cfg=c)
    np.testing.assert_array_equal(psi.widths, c.beta)


def test_select_margin_epsilon_disjunct():
    # cost regressed (j1 > j2) but j1 < epsilon keeps the prediction
    c = cfg(eps=0.4)
    psi = margins.select_margin(np.array([3.0]), 0.9, j_prev1=0.3, j_prev2=0.1, cfg=c)
    np.testing.assert_array_equal(psi.widths, [3.0])
    # and j1 >= epsilon with a regression drops to beta
    psi = margins.select_margin(np.array([3.0]), 0.9, j_prev1=0.5, j_prev2=0.1, cfg=c)
    np.testing.assert_array_equal(psi.widths, c.beta)


def test_select_margin_clamps_to_beta():
    c = cfg(beta=(4.0,))
    psi = margins.select_margin(np.array([9.0]), 0.9, 1.0, 2.0, c)
    np.testing.assert_array_equal(psi.widths, [4.0])


def test_select_margin_without_history():
    c = cfg()
    psi = margins.select_margin(np.array([1.0]), 0.99, None, None, c)
    np.testing.assert_array_equal(psi.widths, c.beta)
    # one prior cost below epsilon is enough (the or-branch)
    psi = margins.select_margin(np.array([1.0]), 0.99, 0.1, None, c)
    np.testing.assert_array_equal(psi.widths, [1.0])


# ---------------------------------------------------------------------------
# population sizing
# ---------------------------------------------------------------------------

def test_population_size_physical_margin_gives_nu():
    c = cfg(beta=(12.0, 12.0, 12.0, 12.0), nu=100, xi=10)
    assert margins.population_size(np.full(4, 12.0), c) == 100


def test_population_size_floor_clamps_to_xi():
    c = cfg(beta=(10.0,), nu=100, xi=10)
    assert margins.population_size(np.array([0.5]), c) == 10   # floor(5) < xi


def test_population_size_midpoint():
    c = cfg(beta=(10.0,), nu=100, xi=10)
    assert margins.population_size(np.array([5.0]), c) == 50


def test_population_size_monotone():
    c = cfg(beta=(10.0, 20.0), nu=200, xi=5)
    rng = np.random.default_rng(2)
    for _ in range(50):
        psi = rng.uniform(0, [10, 20])
        bumped = psi.copy()
        i = rng.integers(0, 2)
        bumped[i] = min(bumped[i] + rng.uniform(0, 5), c.beta[i])
        assert margins.population_size(bumped, c) >= margins.population_size(psi, c)


# ---------------------------------------------------------------------------
# best-smallest-margin extraction
# ---------------------------------------------------------------------------

def test_bsm_zero_for_perfect_time_shift():
    spec = models.sfjr_spec(h=4)
    seq = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    prev = HorizonSolution(seq[:4])
    cur = HorizonSolution(seq[1:])
    delta = margins.bsm_from_solutions(cur, prev, spec)
    np.testing.assert_array_equal(delta.widths, [0.0])


def test_bsm_max_of_absolute_overlap_differences():
    spec = models.sfjr_spec(h=4)
    prev = HorizonSolution(np.array([9.0, 1.0, 2.0, 3.0]))
    cur = HorizonSolution(np.array([1.5, 2.0, 2.0, 7.0]))  # diffs vs prev[1:]: .5, 0, 1.0
    delta = margins.bsm_from_solutions(cur, prev, spec)
    assert delta.widths[0] == pytest.approx(1.0)


def test_bsm_absolute_differences_are_symmetric():
    spec = models.sfjr_spec(h=4)
    prev = HorizonSolution(np.array([9.0, 1.0, 2.0, 3.0]))
    cur = HorizonSolution(np.array([1.5, 2.0, 2.0, 7.0]))
    # exchanging the aligned values leaves the margin unchanged
    prev_swapped = HorizonSolution(np.array([9.0, 1.5, 2.0, 2.0]))
    cur_swapped = HorizonSolution(np.array([1.0, 2.0, 3.0, 7.0]))
    a = margins.bsm_from_solutions(cur, prev, spec)
    b = margins.bsm_from_solutions(cur_swapped, prev_swapped, spec)
    np.testing.assert_array_equal(a.widths, b.widths)


def test_bsm_position_mode_and_symmetry():
    spec = models.sfjr_spec(h=3)
    a = HorizonSolution(np.array([1.0, 2.0, 3.0]))
    b = HorizonSolution(np.array([0.0, 2.5, 2.0]))
    d_ab = margins.bsm_from_solutions(a, b, spec, alignment="position")
    d_ba = margins.bsm_from_solutions(b, a, spec, alignment="position")
    np.testing.assert_array_equal(d_ab.widths, d_ba.widths)
    assert d_ab.widths[0] == pytest.approx(1.0)


def test_bsm_single_step_horizon_is_zero():
    spec = models.sfjr_spec(h=1)
    a = HorizonSolution(np.array([4.0]))
    b = HorizonSolution(np.array([9.0]))
    np.testing.assert_array_equal(margins.bsm_from_solutions(a, b, spec).widths, [0.0])


def test_bsm_multi_input_per_column():
    spec = models.vehicle_spec(h=3)
    prev = HorizonSolution(np.array([0.0, 0.0, 1.0, 0.1, 2.0, 0.2]))
    cur = HorizonSolution(np.array([1.5, 0.1, 2.0, 0.5, 9.9, 9.9]))
    delta = margins.bsm_from_solutions(cur, prev, spec)
    np.testing.assert_allclose(delta.widths, [0.5, 0.3])


# ---------------------------------------------------------------------------
# predictor bank
# ---------------------------------------------------------------------------

def _trained_predictor(rng, n_records=60):
    errors = rng.uniform(0, 1, size=(n_records, 2))
    deltas = np.column_stack([
        2.0 * errors[:, 0] + 0.2 + 0.02 * rng.normal(size=n_records),
        1.0 * errors[:, 1] + 0.5 + 0.02 * rng.normal(size=n_records),
    ])
    c = margins.BsmConfig(beta=np.array([8.0, 8.0]), eta=0.7, epsilon=0.4,
                          nu=100, xi=10, confidence_mode="calibrated")
    return margins.train_margin_predictor(errors, deltas, c, C=5.0, lam=0.05,
                                          gamma=0.5, rng=rng)


def test_predictor_learns_margins_and_clamps():
    rng = np.random.default_rng(3)
    pred = _trained_predictor(rng)
    e = np.array([0.5, 0.5])
    deltas = pred.predict_deltas(e)
    np.testing.assert_allclose(deltas, [1.2, 1.0], atol=0.25)
    assert np.all(deltas <= pred.cfg.beta)


def test_predictor_gate_trusts_near_training_data():
    rng = np.random.default_rng(4)
    pred = _trained_predictor(rng)
    e_near = np.array([0.4, 0.6])
    psi, info = pred.margins_for_cycle(e_near, j_prev1=1.0, j_prev2=2.0)
    assert info["trusted"]
    assert np.all(psi.widths < pred.cfg.beta)
    # far from the support the confidence collapses below the threshold
    e_far = np.array([500.0, -400.0])
    psi, info = pred.margins_for_cycle(e_far, j_prev1=1.0, j_prev2=2.0)
    assert not info["trusted"]
    np.testing.assert_array_equal(psi.widths, pred.cfg.beta)


def test_predictor_gate_needs_history():
    rng = np.random.default_rng(5)
    pred = _trained_predictor(rng)
    psi, info = pred.margins_for_cycle(np.array([0.5, 0.5]), None, None)
    assert not info["trusted"]
    np.testing.assert_array_equal(psi.widths, pred.cfg.beta)


def test_predictor_calibrated_eta_monotone():
    rng = np.random.default_rng(6)
    pred = _trained_predictor(rng)
    lo = margins.MarginPredictor(pred.models,
                                 margins.BsmConfig(beta=pred.cfg.beta, eta=0.2,
                                                   epsilon=0.4, nu=100, xi=10,
                                                   confidence_mode="calibrated"),
                                 pred.calibration)
    hi = margins.MarginPredictor(pred.models,
                                 margins.BsmConfig(beta=pred.cfg.beta, eta=0.9,
                                                   epsilon=0.4, nu=100, xi=10,
                                                   confidence_mode="calibrated"),
                                 pred.calibration)
    # higher eta -> lower threshold -> trusts at least as often
    assert hi.effective_eta() <= lo.effective_eta()


def test_predictor_raw_mode_uses_eta_directly():
    rng = np.random.default_rng(7)
    pred = _trained_predictor(rng)
    raw = margins.MarginPredictor(pred.models,
                                  margins.BsmConfig(beta=pred.cfg.beta, eta=0.33,
                                                    epsilon=0.4, nu=100, xi=10),
                                  None)
    assert raw.effective_eta() == 0.33


def test_predictor_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    pred = _trained_predictor(rng)
    path = tmp_path / "bank.npz"
    pred.save(path)
    loaded = margins.MarginPredictor.load(path)
    e = np.array([0.3, 0.7])
    np.testing.assert_array_equal(pred.predict_deltas(e), loaded.predict_deltas(e))
    assert loaded.cfg.confidence_mode == "calibrated"
    np.testing.assert_array_equal(pred.calibration, loaded.calibration)
    assert loaded.effective_eta() == pred.effective_eta()


def test_margin_vector_validation():
    with pytest.raises(ConfigError):
        margins.MarginVector(np.array([-1.0]))
    with pytest.raises(ConfigError):
        margins.BsmConfig(beta=np.array([0.0]))
