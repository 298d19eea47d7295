"""Off-policy least-squares policy iteration on a frozen batch of tuples.

Each tuple ``(x_k, u_k, x_{k+1}, p_k, p_k^(1))`` pairs a recorded plant
transition with the reference parameters fitted at ``k`` and their
one-step propagation.  Policy evaluation solves the LSTDQ fixed point

    sum_k phi_k (phi_k - gamma phi'_k)^T w = sum_k phi_k c_k

where ``phi'_k`` is taken at the successor under the policy being
evaluated.  Since the successor action is recomputed from the policy, the
same batch is reused by every iteration.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import (
    DimensionError,
    InvalidCost,
    NonConvexInControl,
    NumericalFailure,
    SingularEvaluation,
)
from .qfunc import GainMatrix, features, greedy_gain, n_features, policy_apply, weights_to_H
from .reference import propagate_params

__all__ = [
    "DataTuple",
    "TupleBatch",
    "TrainConfig",
    "TrainingTrace",
    "assemble_tuples",
    "stage_cost",
    "lstdq_evaluate",
    "policy_iterate",
    "bellman_residual",
    "normalize",
    "renormalize_gain",
    "accumulated_cost",
]


def _frozen(a, ndim):
    a = np.array(a, dtype=float)
    if a.ndim == ndim - 1 and ndim == 2:
        a = a[:, None]
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DataTuple:
    x_k: np.ndarray
    u_k: float
    x_k1: np.ndarray
    p_k: np.ndarray
    p_k1: np.ndarray


@dataclass(frozen=True)
class TupleBatch:
    """Column-stacked training tuples; arrays are read-only.

    ``scale`` records the normalisation factor already applied to the
    state and parameter columns.  Stage costs are evaluated on the columns
    as stored, so training on data normalised by ``V_N`` optimises the
    physical state cost ``V_N**2 * Qmat``.
    """

    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray
    p: np.ndarray
    p_next: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x, 2))
        object.__setattr__(self, "u", _frozen(np.ravel(self.u), 1))
        object.__setattr__(self, "x_next", _frozen(self.x_next, 2))
        p = np.asarray(self.p, dtype=float)
        p_next = np.asarray(self.p_next, dtype=float)
        n = self.u.shape[0]
        object.__setattr__(self, "p", _frozen(p.reshape(n, -1), 2))
        object.__setattr__(self, "p_next", _frozen(p_next.reshape(n, -1), 2))
        if not (self.x.shape[0] == self.x_next.shape[0] == self.p.shape[0] == self.p_next.shape[0] == n):
            raise DimensionError("tuple columns disagree in length")
        if self.x.shape != self.x_next.shape or self.p.shape != self.p_next.shape:
            raise DimensionError("successor columns must match their predecessors")

    def __len__(self):
        return self.u.shape[0]

    @property
    def n_x(self):
        return self.x.shape[1]

    @property
    def n_p(self):
        return self.p.shape[1]

    def reference_now(self):
        """Current desired position ``r(p_k, 0)`` in stored units.

        For both supported bases ``rho(0)`` selects the constant
        coefficient, which is the last parameter.
        """
        if self.n_p == 0:
            return np.zeros(len(self))
        return self.p[:, -1]

    @classmethod
    def from_tuples(cls, tuples):
        tuples = list(tuples)
        if not tuples:
            raise DimensionError("no tuples given")
        return cls(
            np.array([t.x_k for t in tuples]),
            np.array([t.u_k for t in tuples]),
            np.array([t.x_k1 for t in tuples]),
            np.array([np.atleast_1d(t.p_k) for t in tuples]),
            np.array([np.atleast_1d(t.p_k1) for t in tuples]),
        )

    def tuples(self):
        for k in range(len(self)):
            yield DataTuple(self.x[k], float(self.u[k]), self.x_next[k], self.p[k], self.p_next[k])


def assemble_tuples(data, params, spec):
    """Pair recorded transitions with fitted and propagated reference parameters.

    ``params`` needs one row per transition of ``data``.
    """
    n = len(data)
    params = np.asarray(params, dtype=float)
    if params.shape[0] < n or params.shape[1] != spec.n_p:
        raise DimensionError(f"need {n} parameter rows of length {spec.n_p}")
    p = params[:n]
    return TupleBatch(data.states[:-1], data.controls, data.states[1:], p, propagate_params(p, spec, 1))


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    Qmat: np.ndarray = field(default_factory=lambda: np.diag([800.0, 0.0, 400.0, 0.0]))
    R: float = 1.0
    eps: float = 1e-6
    max_iter: int = 100
    ridge: float = 1e-8
    V_N: float = 10.0
    w0: float = 1.0

    def __post_init__(self):
        Q = np.asarray(self.Qmat, dtype=float)
        object.__setattr__(self, "Qmat", Q)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DimensionError("state cost must be square")
        if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-12 * max(1.0, np.abs(Q).max()):
            raise InvalidCost("state cost must be positive semi-definite")
        if not self.R > 0:
            raise InvalidCost("control cost must be positive")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.eps > 0 or self.ridge < 0 or self.V_N <= 0 or self.max_iter < 1:
            raise ValueError("eps, V_N, max_iter must be positive and ridge non-negative")

    @property
    def physical_state_cost(self):
        """State cost in physical units implied by training on normalised data."""
        return self.V_N**2 * self.Qmat


@dataclass
class TrainingTrace:
    """Weights ``w_0 .. w_l`` and successive differences of one training run."""

    weights: list = field(default_factory=list)
    deltas: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.deltas)

    def to_csv(self, path):
        """Rows ``iter, delta, w_0 .. w_{n_w-1}``; row 0 holds the initial weights."""
        n_w = len(self.weights[0])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "delta", *(f"w_{i}" for i in range(n_w))])
            for it, w in enumerate(self.weights):
                delta = "nan" if it == 0 else repr(float(self.deltas[it - 1]))
                writer.writerow([it, delta, *(repr(float(v)) for v in w)])


def stage_cost(x, u, r0, cfg):
    """``e' Q e + R u^2`` with ``e = [x_1 - r0, x_2, ...]``; batched over rows."""
    e = np.array(x, dtype=float)
    e[..., 0] -= r0
    Qe = e @ cfg.Qmat
    return np.einsum("...i,...i->...", Qe, e) + cfg.R * np.asarray(u, dtype=float) ** 2


def _accumulate(batch, L, cfg, offset, rows):
    x, u, p = batch.x[rows], batch.u[rows], batch.p[rows]
    xn, pn = batch.x_next[rows], batch.p_next[rows]
    phi = features(x, u, p, offset)
    phi_next = features(xn, policy_apply(L, xn, pn), pn, offset)
    c = stage_cost(x, u, batch.reference_now()[rows], cfg)
    return phi.T @ (phi - cfg.gamma * phi_next), phi.T @ c


def lstdq_evaluate(batch, L, cfg, offset=True, n_jobs=1, chunk_size=None):
    """LSTDQ weights of the policy ``u = -L [x; p; 1]`` on ``batch``.

    Parameters
    ----------
    batch : TupleBatch
    L : GainMatrix
        Policy to evaluate, in the same coordinates as ``batch``.
    cfg : TrainConfig
    offset : bool, default=True
        Include the constant entry in ``z``.
    n_jobs : int, default=1
        Threads used for the per-chunk accumulation.  Partial sums are
        added in chunk order, so the result only depends on ``chunk_size``.
    chunk_size : int, optional
        Rows per partial sum; defaults to the whole batch when ``n_jobs``
        is 1.

    Returns
    -------
    w : ndarray of shape (n_w,)
    """
    n = len(batch)
    if chunk_size is None:
        chunk_size = n if n_jobs == 1 else max(1, -(-n // n_jobs))
    slices = [slice(i, min(i + chunk_size, n)) for i in range(0, n, chunk_size)]
    # non-finite sums are detected below, so silence the float warnings
    with np.errstate(invalid="ignore", over="ignore"):
        if n_jobs == 1 or len(slices) == 1:
            parts = [_accumulate(batch, L, cfg, offset, s) for s in slices]
        else:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                parts = list(pool.map(lambda s: _accumulate(batch, L, cfg, offset, s), slices))
        A = sum(a for a, _ in parts)
        b = sum(b for _, b in parts)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise NumericalFailure("non-finite values in the LSTDQ accumulation")
    A = A + cfg.ridge * np.eye(A.shape[0])
    try:
        w = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularEvaluation(f"LSTDQ system is singular: {exc}") from None
    if not np.all(np.isfinite(w)):
        raise SingularEvaluation("LSTDQ solve produced non-finite weights")
    return w


def _initial_gain(w0, n_x, offset):
    try:
        return greedy_gain(weights_to_H(w0), n_x, offset)
    except NonConvexInControl:
        n_z = int(round((np.sqrt(8 * w0.size + 1) - 1) / 2))
        return GainMatrix.zeros(n_x, n_z - 1 - n_x - int(offset))


def policy_iterate(batch, cfg, spec=None, offset=True, n_jobs=1):
    """Alternate LSTDQ evaluation and greedy improvement until
    ``||w_l - w_{l-1}||_2 <= eps``.

    Returns ``(gain, weights, trace)`` in the coordinates of ``batch``.
    When ``max_iter`` is reached first, the last iterate is returned with
    ``trace.converged`` left False.
    """
    if spec is not None and batch.n_p != spec.n_p:
        raise DimensionError(f"batch has {batch.n_p} reference parameters, basis has {spec.n_p}")
    n_x = batch.n_x
    n_w = n_features(1 + n_x + batch.n_p + int(offset))
    w = np.broadcast_to(np.asarray(cfg.w0, dtype=float), (n_w,)).copy()
    L = _initial_gain(w, n_x, offset)
    trace = TrainingTrace(weights=[w.copy()])
    for it in range(1, cfg.max_iter + 1):
        try:
            w_new = lstdq_evaluate(batch, L, cfg, offset, n_jobs)
        except SingularEvaluation as exc:
            raise SingularEvaluation(str(exc), iteration=it) from None
        delta = float(np.linalg.norm(w_new - w))
        trace.weights.append(w_new.copy())
        trace.deltas.append(delta)
        w = w_new
        try:
            L = greedy_gain(weights_to_H(w), n_x, offset)
        except NonConvexInControl as exc:
            # an identically zero Q-function is minimised by every policy
            if np.any(w):
                raise NonConvexInControl(exc.h_uu, iteration=it) from None
        if delta <= cfg.eps:
            trace.converged = True
            break
    return L, w, trace


def bellman_residual(w, L, batch, cfg, offset=True):
    """Mean absolute TD residual divided by the mean absolute stage cost."""
    phi = features(batch.x, batch.u, batch.p, offset)
    phi_next = features(batch.x_next, policy_apply(L, batch.x_next, batch.p_next), batch.p_next, offset)
    c = stage_cost(batch.x, batch.u, batch.reference_now(), cfg)
    res = phi @ w - c - cfg.gamma * (phi_next @ w)
    return float(np.mean(np.abs(res)) / np.mean(np.abs(c)))


def normalize(batch, V_N):
    """Scale states and reference parameters by ``V_N``; controls unchanged."""
    if not V_N > 0:
        raise ValueError("V_N must be positive")
    return replace(
        batch,
        x=batch.x * V_N,
        x_next=batch.x_next * V_N,
        p=batch.p * V_N,
        p_next=batch.p_next * V_N,
        scale=batch.scale * V_N,
    )


def renormalize_gain(L, V_N):
    """Map a gain learned on normalised data back to physical units."""
    if not V_N > 0:
        raise ValueError("V_N must be positive")
    return GainMatrix(L.L_x * V_N, L.L_ref * V_N, L.L_off)


def accumulated_cost(states, controls, refs_p, cfg):
    """Running undiscounted sum of stage costs against ``r(p_k, 0)``."""
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    refs_p = np.asarray(refs_p, dtype=float)
    if refs_p.ndim == 1:
        refs_p = refs_p[:, None]
    if not (states.shape[0] == controls.shape[0] == refs_p.shape[0]):
        raise DimensionError("states, controls and reference parameters differ in length")
    return np.cumsum(stage_cost(states, controls, refs_p[:, -1], cfg))

