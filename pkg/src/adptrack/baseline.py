"""Model-based discounted LQ tracking on the augmented state ``[x; p; 1]``.

The reference parameters evolve autonomously, ``p_{k+1} = T(1)^T p_k``,
and the constant channel carries the input disturbance ``B d``.  With the
tracking error ``e = M [x; p; 1]`` the objective becomes an ordinary
discounted LQ problem, solved here by Riccati value iteration.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, InvalidCost, NotConverged
from .plant import discretize
from .qfunc import GainMatrix
from .reference import eval_basis, shift_matrix

__all__ = [
    "LinearModel",
    "AugModel",
    "RiccatiSolution",
    "augment",
    "tracking_cost_matrix",
    "solve_discounted_lqt",
]


@dataclass(frozen=True)
class LinearModel:
    """Discrete model ``x' = A x + B u`` with a single input."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or B.shape != (A.shape[0],):
            raise DimensionError("need square A and matching single-input B")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n_x(self):
        return self.A.shape[0]

    @classmethod
    def from_plant(cls, params):
        return cls(*discretize(params))

    def controllability_matrix(self):
        cols = [self.B]
        for _ in range(self.n_x - 1):
            cols.append(self.A @ cols[-1])
        return np.column_stack(cols)

    def is_controllable(self):
        return np.linalg.matrix_rank(self.controllability_matrix()) == self.n_x


@dataclass(frozen=True)
class AugModel:
    """Augmented dynamics ``xi' = A xi + B u`` with ``xi = [x; p; 1]``."""

    A: np.ndarray
    B: np.ndarray
    n_x: int
    n_p: int

    @property
    def n_xi(self):
        return self.A.shape[0]


def augment(model, spec, d=0.0):
    """Stack plant, reference propagation and the constant channel."""
    n_x, n_p = model.n_x, spec.n_p
    n = n_x + n_p + 1
    A = np.zeros((n, n))
    A[:n_x, :n_x] = model.A
    A[:n_x, -1] = model.B * d
    A[n_x : n_x + n_p, n_x : n_x + n_p] = shift_matrix(spec, 1).T
    A[-1, -1] = 1.0
    B = np.zeros(n)
    B[:n_x] = model.B
    return AugModel(A, B, n_x, n_p)


def tracking_cost_matrix(Qmat, spec, n_x=4):
    """``M^T Q M`` where ``M [x; p; 1] = [x_1 - p @ rho(0), x_2, ...]``."""
    Qmat = np.asarray(Qmat, dtype=float)
    if Qmat.shape != (n_x, n_x):
        raise DimensionError(f"state cost must be {n_x}x{n_x}")
    M = np.zeros((n_x, n_x + spec.n_p + 1))
    M[:, :n_x] = np.eye(n_x)
    M[0, n_x : n_x + spec.n_p] = -eval_basis(spec, 0)
    return M.T @ Qmat @ M


@dataclass(frozen=True)
class RiccatiSolution:
    """Fixed point of the discounted Riccati recursion.

    ``H`` is the matching Q-function matrix over ``[u; x; p; 1]``, so it
    can be compared directly with learned weights.
    """

    P: np.ndarray
    gain: GainMatrix
    H: np.ndarray
    iterations: int
    residual: float


def _check_psd(S, name):
    S = np.asarray(S, dtype=float)
    if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise InvalidCost(f"{name} is not symmetric")
    lo = np.linalg.eigvalsh(0.5 * (S + S.T)).min() if S.size else 0.0
    if lo < -1e-10 * max(1.0, np.abs(S).max()):
        raise InvalidCost(f"{name} is indefinite (min eigenvalue {lo:.3g})")


def solve_discounted_lqt(aug, Qmat, R, gamma, spec, tol=1e-10, max_iter=100_000):
    """Discounted Riccati value iteration on the augmented model.

    Iterates ``P <- Q_aug + g A'PA - g^2 A'PB (R + g B'PB)^-1 B'PA`` from
    ``P = 0`` until the max-abs change is at most ``tol``; the constant
    channel's unit eigenvalue is harmless because ``gamma < 1``.

    Returns
    -------
    RiccatiSolution
        ``gain`` is ``(R + g B'PB)^-1 g B'PA`` split into
        ``[L_x | L_ref | L_off]``.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if not R > 0:
        raise InvalidCost("control cost R must be positive")
    _check_psd(Qmat, "state cost")
    Qa = tracking_cost_matrix(Qmat, spec, aug.n_x)
    A, B = aug.A, aug.B
    P = np.zeros_like(Qa)
    scale = max(1.0, np.abs(Qa).max())
    for it in range(1, max_iter + 1):
        PA = P @ A
        PB = P @ B
        denom = R + gamma * B @ PB
        P_new = Qa + gamma * A.T @ PA - gamma**2 * np.outer(A.T @ PB, PB @ A) / denom
        P_new = 0.5 * (P_new + P_new.T)
        lo = np.linalg.eigvalsh(P_new).min()
        if lo < -1e-10 * max(scale, np.abs(P_new).max()):
            raise InvalidCost(f"Riccati iterate lost semi-definiteness ({lo:.3g})")
        delta = np.abs(P_new - P).max()
        P = P_new
        if delta <= tol:
            break
    else:
        raise NotConverged(f"Riccati recursion did not reach tol={tol} in {max_iter} steps")

    h_uu = R + gamma * B @ P @ B
    h_ux = gamma * B @ P @ A
    row = h_ux / h_uu
    n_x, n_p = aug.n_x, aug.n_p
    gain = GainMatrix(row[:n_x], row[n_x : n_x + n_p], row[-1])
    n = aug.n_xi + 1
    H = np.empty((n, n))
    H[0, 0] = h_uu
    H[0, 1:] = h_ux
    H[1:, 0] = h_ux
    H[1:, 1:] = Qa + gamma * A.T @ P @ A
    return RiccatiSolution(P, gain, 0.5 * (H + H.T), it, float(delta))
