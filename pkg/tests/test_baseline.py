import numpy as np
import pytest
import scipy.linalg

from adptrack.baseline import (
    AugModel,
    LinearModel,
    augment,
    solve_discounted_lqt,
    tracking_cost_matrix,
)
from adptrack.exceptions import DimensionError, InvalidCost, NotConverged
from adptrack.plant import PlantParams, discretize, step
from adptrack.qfunc import GainMatrix, H_to_weights, greedy_gain, policy_apply
from adptrack.reference import BasisSpec, eval_ref, propagate_params, shift_matrix

PLANT = LinearModel.from_plant(PlantParams())
Q_PHYS = np.diag([80000.0, 0.0, 40000.0, 0.0])
SPEC3 = BasisSpec(3, 0.04)


@pytest.fixture(scope="module")
def solution():
    return solve_discounted_lqt(augment(PLANT, SPEC3), Q_PHYS, 1.0, 0.9, SPEC3)


def test_linear_model_checks():
    assert PLANT.n_x == 4 and PLANT.is_controllable()
    assert np.linalg.matrix_rank(PLANT.controllability_matrix()) == 4
    with pytest.raises(DimensionError):
        LinearModel(np.eye(3), np.ones(4))


def test_augmented_dimensions_and_blocks():
    aug = augment(PLANT, BasisSpec(1), 0.0)
    assert aug.A.shape == (6, 6) and aug.n_xi == 6
    aug = augment(PLANT, SPEC3, -2.2)
    np.testing.assert_array_equal(aug.A[4:7, 4:7], shift_matrix(SPEC3, 1).T)
    np.testing.assert_array_equal(aug.A[:4, -1], PLANT.B * -2.2)
    assert aug.A[-1, -1] == 1.0 and not np.any(aug.A[-1, :-1]) and aug.B[-1] == 0


def test_co_simulation(rng):
    d = -2.2
    params = PlantParams(d=d)
    aug = augment(PLANT, SPEC3, d)
    L = GainMatrix(rng.standard_normal(4), rng.standard_normal(3), 0.4)
    x, p = np.zeros(4), np.array([0.5, -0.2, 0.05])
    xi = np.concatenate([x, p, [1.0]])
    model = discretize(params)
    for _ in range(50):
        u = float(policy_apply(L, x, p))
        x = step(x, u, params, model)
        p = propagate_params(p, SPEC3, 1)
        xi = aug.A @ xi + aug.B * u
        np.testing.assert_allclose(xi, np.concatenate([x, p, [1.0]]), rtol=1e-10, atol=1e-12)


def test_tracking_cost_encodes_error(rng):
    Qa = tracking_cost_matrix(Q_PHYS, SPEC3)
    for _ in range(10):
        x, p = rng.standard_normal(4), rng.standard_normal(3)
        e = x.copy()
        e[0] -= eval_ref(p, SPEC3, 0)
        xi = np.concatenate([x, p, [1.0]])
        assert xi @ Qa @ xi == pytest.approx(e @ Q_PHYS @ e, rel=1e-12)


def test_zero_cost():
    sol = solve_discounted_lqt(augment(PLANT, SPEC3), np.zeros((4, 4)), 1.0, 0.9, SPEC3)
    assert not np.any(sol.P)
    assert not np.any(sol.gain.as_array())


@pytest.mark.parametrize("gamma", [0.5, 0.9, 0.99])
@pytest.mark.parametrize("q,r", [(1.0, 1.0), (2.0, 0.5)])
def test_scalar_closed_form(gamma, q, r):
    # x' = x + u with p = 0 and no offset: the x-block is the scalar
    # discounted ARE root of gamma P^2 + (r - q gamma - gamma r) P - q r = 0
    spec = BasisSpec(1, 0.04)
    aug = AugModel(np.eye(3), np.array([1.0, 0.0, 0.0]), 1, 1)
    sol = solve_discounted_lqt(aug, np.array([[q]]), r, gamma, spec)
    b = r - q * gamma - gamma * r
    root = (-b + np.sqrt(b * b + 4 * gamma * q * r)) / (2 * gamma)
    assert sol.P[0, 0] == pytest.approx(root, rel=1e-9)


def test_scipy_dare_oracle(solution):
    aug = augment(PLANT, SPEC3)
    g = 0.9
    Qa = tracking_cost_matrix(Q_PHYS, SPEC3)
    P = scipy.linalg.solve_discrete_are(np.sqrt(g) * aug.A, np.sqrt(g) * aug.B[:, None], Qa, np.array([[1.0]]))
    np.testing.assert_allclose(solution.P, P, rtol=1e-7, atol=1e-7 * np.abs(P).max())


def test_solution_is_symmetric_psd(solution):
    P = solution.P
    np.testing.assert_array_equal(P, P.T)
    assert np.linalg.eigvalsh(P).min() >= -1e-10 * np.abs(P).max()
    assert solution.residual <= 1e-10


def test_gain_is_stationary(solution):
    aug = augment(PLANT, SPEC3)
    g, R = 0.9, 1.0
    P = solution.P
    Qa = tracking_cost_matrix(Q_PHYS, SPEC3)
    PB = P @ aug.B
    P1 = Qa + g * aug.A.T @ P @ aug.A - g * g * np.outer(aug.A.T @ PB, PB @ aug.A) / (R + g * aug.B @ PB)
    L1 = g * aug.B @ P1 @ aug.A / (R + g * aug.B @ P1 @ aug.B)
    assert np.abs(L1 - solution.gain.as_array()).max() < 1e-9


def test_gain_matches_greedy_of_H(solution):
    L = greedy_gain(solution.H)
    np.testing.assert_allclose(L.as_array(), solution.gain.as_array(), rtol=1e-14)
    assert H_to_weights(solution.H).size == 45


def test_closed_loop_is_stable(solution):
    A, B = PLANT.A, PLANT.B
    assert np.abs(np.linalg.eigvals(A - np.outer(B, solution.gain.L_x))).max() < 1


def test_no_offset_without_imbalance(solution):
    assert solution.gain.L_off == 0.0


def test_offset_cancels_imbalance():
    d = -2.2
    sol = solve_discounted_lqt(augment(PLANT, SPEC3, d), Q_PHYS, 1.0, 0.9, SPEC3)
    # the discounted optimum trades a little residual error for current
    assert sol.gain.L_off == pytest.approx(d, rel=0.05)
    # closed-loop equilibrium at zero reference sits near the plate centre
    A, B, L = PLANT.A, PLANT.B, sol.gain
    x_ss = np.linalg.solve(np.eye(4) - A + np.outer(B, L.L_x), B * (d - L.L_off))
    assert abs(x_ss[0]) < 1e-3


def test_errors():
    aug = augment(PLANT, SPEC3)
    with pytest.raises(InvalidCost):
        solve_discounted_lqt(aug, np.diag([1.0, -1.0, 0, 0]), 1.0, 0.9, SPEC3)
    with pytest.raises(InvalidCost):
        solve_discounted_lqt(aug, Q_PHYS, 0.0, 0.9, SPEC3)
    with pytest.raises(ValueError):
        solve_discounted_lqt(aug, Q_PHYS, 1.0, 1.0, SPEC3)
    with pytest.raises(NotConverged):
        solve_discounted_lqt(aug, Q_PHYS, 1.0, 0.9, SPEC3, max_iter=3)
