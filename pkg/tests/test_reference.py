import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adptrack.exceptions import AmplitudeError, DimensionError, RankDeficiencyError
from adptrack.reference import (
    PLATE_HALF_WIDTH,
    BasisSpec,
    FitConfig,
    ReferenceApproximator,
    ReferenceSignal,
    eval_basis,
    eval_ref,
    fit_params,
    fit_projection,
    fit_reference_params,
    make_rectangle_2d,
    make_sine_step,
    make_training_reference,
    make_validation_composite,
    propagate_params,
    shift_matrix,
)

SPEC = BasisSpec(3, 0.04)
coef = st.floats(-5.0, 5.0, allow_nan=False)
steps = st.integers(0, 200)
dts = st.sampled_from([0.01, 0.02, 0.04, 0.1])


def test_basis_examples():
    np.testing.assert_allclose(eval_basis(SPEC, 1), [0.0016, 0.04, 1.0], rtol=1e-15)
    assert eval_ref(np.array([1.0, 0.0, 0.0]), SPEC, 2) == pytest.approx(0.0064, rel=1e-14)
    np.testing.assert_array_equal(eval_basis(BasisSpec(1), 7), [1.0])


def test_shift_matrix_example():
    expected = [[1, 0.08, 0.0016], [0, 1, 0.04], [0, 0, 1]]
    np.testing.assert_allclose(shift_matrix(SPEC, 1), expected, rtol=1e-15)
    np.testing.assert_array_equal(shift_matrix(SPEC, 0), np.eye(3))


@given(steps, steps, dts)
def test_semigroup(i, j, dt):
    spec = BasisSpec(3, dt)
    lhs = shift_matrix(spec, i) @ shift_matrix(spec, j)
    np.testing.assert_allclose(lhs, shift_matrix(spec, i + j), rtol=1e-12, atol=0)


@given(st.lists(coef, min_size=3, max_size=3), steps, steps, dts)
def test_shift_consistency(p, i, j, dt):
    spec = BasisSpec(3, dt)
    p = np.array(p)
    lhs = eval_ref(propagate_params(p, spec, i), spec, j)
    rhs = eval_ref(p, spec, i + j)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12 * np.abs(p).sum() * (1 + (i + j) * dt) ** 2)


def test_propagate_rowwise():
    P = np.arange(12.0).reshape(4, 3)
    rows = np.array([propagate_params(p, SPEC, 3) for p in P])
    np.testing.assert_array_equal(propagate_params(P, SPEC, 3), rows)


def test_fit_constant_window():
    p = fit_params(np.full(10, 0.3), FitConfig(), SPEC)
    np.testing.assert_allclose(p, [0, 0, 0.3], atol=1e-13)


def test_fit_example_polynomial():
    t = np.arange(10) * 0.04
    window = 3 * t**2 - t + 0.1
    p = fit_params(window, FitConfig(0.8, 10), SPEC)
    np.testing.assert_allclose(p, [3.0, -1.0, 0.1], atol=1e-10)
    residual = window - np.array([eval_ref(p, SPEC, i) for i in range(10)])
    assert np.abs(residual).max() < 1e-10


@given(st.lists(coef, min_size=3, max_size=3), st.floats(0.3, 1.0), st.integers(3, 25))
def test_exact_polynomial_recovery(c, beta, h_r):
    c = np.array(c)
    t = np.arange(h_r) * SPEC.dt
    window = c[0] * t**2 + c[1] * t + c[2]
    p = fit_params(window, FitConfig(beta, h_r), SPEC)
    assert np.abs(p - c).max() < 1e-9


@given(st.lists(coef, min_size=10, max_size=10), st.floats(0.3, 1.0))
def test_residual_orthogonal_to_basis(window, beta):
    cfg = FitConfig(beta, 10)
    window = np.array(window)
    p = fit_params(window, cfg, SPEC)
    Phi = np.array([eval_basis(SPEC, i) for i in range(10)])
    W = np.diag(beta ** np.arange(10))
    scale = max(1.0, np.abs(window).max())
    np.testing.assert_allclose(Phi.T @ W @ (window - Phi @ p), 0.0, atol=1e-11 * scale)


@given(st.lists(coef, min_size=10, max_size=10), st.floats(0.3, 1.0))
def test_setpoint_basis_is_weighted_mean(window, beta):
    window = np.array(window)
    wts = beta ** np.arange(10)
    p = fit_params(window, FitConfig(beta, 10), BasisSpec(1))
    assert p[0] == pytest.approx(wts @ window / wts.sum(), rel=1e-12, abs=1e-12)


def test_short_horizon_is_rank_deficient():
    with pytest.raises(RankDeficiencyError):
        fit_projection(FitConfig(0.8, 2), SPEC)
    with pytest.raises(DimensionError):
        fit_params(np.zeros(5), FitConfig(0.8, 10), SPEC)


def test_fit_reference_params_pads_last_sample():
    r = np.linspace(0, 1, 20)
    cfg = FitConfig()
    P = fit_reference_params(r, cfg, SPEC)
    assert P.shape == (20, 3)
    np.testing.assert_allclose(P[5], fit_params(r[5:15], cfg, SPEC), rtol=1e-13, atol=1e-13)
    padded = np.concatenate([r[15:], np.full(5, r[-1])])
    np.testing.assert_allclose(P[15], fit_params(padded, cfg, SPEC), rtol=1e-13, atol=1e-13)


def test_approximator_estimator():
    r = make_sine_step().samples
    est = ReferenceApproximator().fit()
    P = est.transform(r)
    np.testing.assert_array_equal(P, fit_reference_params(r, FitConfig(), SPEC))
    np.testing.assert_array_equal(est.propagate(P, 1), propagate_params(P, SPEC, 1))
    assert est.get_params() == {"n_p": 3, "dt": 0.04, "beta": 0.8, "horizon": 10}
    assert est.fit_transform(r[:, None]).shape == (r.size, 3)


def test_generators_on_plate():
    assert np.abs(make_training_reference().samples).max() <= 0.2
    assert len(make_training_reference()) == 1200
    for ref in (make_sine_step(), make_validation_composite(), make_rectangle_2d()):
        assert np.abs(ref.samples).max() <= PLATE_HALF_WIDTH
    assert make_rectangle_2d().is_2d
    with pytest.raises(AmplitudeError):
        make_sine_step(amplitude=0.6)
    with pytest.raises(AmplitudeError):
        make_validation_composite(scale=5.0)


def test_sine_step_levels():
    ref = make_sine_step(amplitude=0.1, hold=2.0, n_steps=4)
    levels = set(np.round(ref.samples, 12))
    assert {0.1, -0.1, 0.0} <= levels
    assert ref.samples.max() == pytest.approx(0.1)


@pytest.mark.parametrize("make", [make_sine_step, make_rectangle_2d])
def test_reference_csv_round_trip(tmp_path, make):
    ref = make()
    path = tmp_path / "ref.csv"
    ref.to_csv(path)
    back = ReferenceSignal.from_csv(path)
    np.testing.assert_array_equal(back.samples, ref.samples)
    assert back.dt == pytest.approx(ref.dt)
    header = path.read_text().splitlines()[0]
    assert header == ("k,t,rx,ry" if ref.is_2d else "k,t,r")
