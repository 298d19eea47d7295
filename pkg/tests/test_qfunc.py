import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adptrack.exceptions import DimensionError, NonConvexInControl
from adptrack.qfunc import (
    GainMatrix,
    H_to_weights,
    augmented,
    features,
    greedy_gain,
    load_gain,
    n_features,
    policy_apply,
    q_value,
    save_gain,
    weights_to_H,
)

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)


def random_sym(rng, n):
    M = rng.standard_normal((n, n))
    return M + M.T


def test_feature_counts():
    assert n_features(9) == 45
    assert features(np.zeros(4), 0.0, np.zeros(3)).size == 45
    assert features(np.zeros(4), 0.0, np.zeros(1)).size == 28
    assert features(np.zeros(4), 0.0, np.zeros(1), offset=False).size == 21


def test_features_of_constant_only():
    phi = features(np.zeros(4), 0.0, np.zeros(3))
    assert phi[-1] == 1.0
    assert np.count_nonzero(phi) == 1


def test_batched_features_match_single(rng):
    x = rng.standard_normal((6, 4))
    u = rng.standard_normal(6)
    p = rng.standard_normal((6, 3))
    batch = features(x, u, p)
    for k in range(6):
        np.testing.assert_array_equal(batch[k], features(x[k], u[k], p[k]))
    with pytest.raises(DimensionError):
        features(x, u[:5], p)


def test_identity_oracle_random(rng):
    for _ in range(100):
        H = random_sym(rng, 9)
        w = H_to_weights(H)
        x, u, p = rng.standard_normal(4), rng.standard_normal(), rng.standard_normal(3)
        z = augmented(x, u, p)
        assert q_value(w, x, u, p) == pytest.approx(z @ H @ z, rel=1e-12, abs=1e-12)


@given(arrays(float, 45, elements=finite), arrays(float, 9, elements=finite))
def test_w_phi_equals_quadratic_form(w, z):
    H = weights_to_H(w)
    lhs = w @ features(z[1:5], z[0], z[5:8])
    zz = np.append(z[:8], 1.0)
    rhs = zz @ H @ zz
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12 * (1 + np.abs(w).sum() * (1 + np.abs(zz).max()) ** 2))


# halving a subnormal can drop its last bit, so the exact round trip is
# stated for normal floats
normal = st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False)


@given(arrays(float, 45, elements=normal))
def test_weights_round_trip_bit_exact(w):
    np.testing.assert_array_equal(H_to_weights(weights_to_H(w)), w)


def test_conversion_examples():
    H = weights_to_H(np.ones(45))
    assert np.all(np.diag(H) == 1.0)
    assert np.all(H[np.triu_indices(9, 1)] == 0.5)
    assert np.array_equal(H, H.T)
    w = H_to_weights(np.eye(9))
    i, j = np.triu_indices(9)
    np.testing.assert_array_equal(w, (i == j).astype(float))
    with pytest.raises(DimensionError):
        weights_to_H(np.ones(44))


def test_q_value_examples(rng):
    x, u, p = rng.standard_normal(4), 0.7, rng.standard_normal(3)
    assert q_value(np.zeros(45), x, u, p) == 0.0
    z = augmented(x, u, p)
    assert q_value(H_to_weights(np.eye(9)), x, u, p) == pytest.approx(z @ z, rel=1e-14)
    with pytest.raises(DimensionError):
        q_value(np.zeros(28), x, u, p)


def test_q_quadratic_scaling(rng):
    H = random_sym(rng, 9)
    z = rng.standard_normal(9)
    for a in (0.5, 2.0, -3.0):
        assert (a * z) @ H @ (a * z) == pytest.approx(a * a * (z @ H @ z), rel=1e-12)


def test_greedy_examples():
    H = np.zeros((9, 9))
    H[0, 0] = 1.0
    H[0, 1] = H[1, 0] = 1.0
    L = greedy_gain(H)
    np.testing.assert_array_equal(L.L_x, [1, 0, 0, 0])
    np.testing.assert_array_equal(L.L_ref, [0, 0, 0])
    assert L.L_off == 0.0
    H = np.zeros((9, 9))
    H[0, 0] = 2.0
    H[0, -1] = H[-1, 0] = 3.0
    assert greedy_gain(H).L_off == 1.5


@pytest.mark.parametrize("h_uu", [0.0, -1.0, 1e-11])
def test_greedy_rejects_nonconvex(h_uu):
    H = np.eye(9)
    H[0, 0] = h_uu
    with pytest.raises(NonConvexInControl):
        greedy_gain(H)


def spd_H(rng, n=9):
    M = rng.standard_normal((n, n))
    return M @ M.T + 0.1 * np.eye(n)


def test_first_order_condition(rng):
    for _ in range(100):
        H = random_sym(rng, 9)
        H[0, 0] = abs(H[0, 0]) + 0.5
        x, p = rng.standard_normal(4), rng.standard_normal(3)
        L = greedy_gain(H)
        u = policy_apply(L, x, p)
        grad = H[0, 1:5] @ x + H[0, 5:8] @ p + H[0, 8] + H[0, 0] * u
        scale = H[0, 0] * abs(u) + np.abs(H[0, 1:]).sum() * (1 + np.abs(x).max() + np.abs(p).max())
        assert abs(grad) <= 1e-14 * scale


def test_grid_search_oracle(rng):
    for _ in range(20):
        H = spd_H(rng)
        w = H_to_weights(H)
        x, p = rng.standard_normal(4), rng.standard_normal(3)
        u_star = float(policy_apply(greedy_gain(H), x, p))
        grid = np.linspace(u_star - 1.0, u_star + 1.0, 10_000)
        n = grid.size
        q = q_value(w, np.tile(x, (n, 1)), grid, np.tile(p, (n, 1)))
        assert abs(grid[np.argmin(q)] - u_star) <= grid[1] - grid[0]


def test_policy_apply_examples(rng):
    x, p = rng.standard_normal(4), rng.standard_normal(3)
    assert policy_apply(GainMatrix.zeros(4, 3), x, p) == 0.0
    L = GainMatrix(np.zeros(4), np.zeros(3), 2.2)
    assert policy_apply(L, np.zeros(4), np.zeros(3)) == -2.2
    L = GainMatrix(rng.standard_normal(4), rng.standard_normal(3), 0.3)
    assert policy_apply(L, x, p) == pytest.approx(-(L.as_array() @ np.concatenate([x, p, [1.0]])), rel=1e-14)


def test_gain_json_round_trip(tmp_path, rng):
    L = GainMatrix(rng.standard_normal(4), rng.standard_normal(3), -2.2)
    w = rng.standard_normal(45)
    path = tmp_path / "gain.json"
    save_gain(path, L, w, 3, True)
    L2, w2, n_p, normalized = load_gain(path)
    np.testing.assert_array_equal(L2.as_array(), L.as_array())
    np.testing.assert_array_equal(w2, w)
    assert (n_p, normalized) == (3, True)
    assert set(json.loads(path.read_text())) == {"n_p", "normalized", "w", "L"}


def test_gain_array_round_trip(rng):
    arr = rng.standard_normal(6)
    L = GainMatrix.from_array(arr)
    assert (L.n_x, L.n_p) == (4, 1)
    np.testing.assert_array_equal(L.as_array(), arr)
