"""Estimator front-ends for the learned and the model-based tracking controllers.

Both expose ``fit`` / ``predict`` / ``get_params`` so they can be cloned,
grid-searched and compared interchangeably.  ``predict`` takes rows
``[x (4), p (n_p)]`` and returns the motor current.
"""

import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted

from .baseline import LinearModel, augment, solve_discounted_lqt
from .exceptions import DimensionError
from .lspi import (
    TrainConfig,
    TupleBatch,
    bellman_residual,
    normalize,
    policy_iterate,
    renormalize_gain,
)
from .qfunc import H_to_weights, gain_document, policy_apply, q_value, save_gain
from .reference import BasisSpec

__all__ = ["ADPTrackingController", "ModelBasedTrackingController"]


def _cost_matrix(state_cost):
    Q = np.asarray(state_cost, dtype=float)
    return np.diag(Q) if Q.ndim == 1 else Q


class _PolicyMixin:
    n_x = 4

    def predict(self, X):
        """Control current for each row ``[x, p]`` of ``X``.

        Parameters
        ----------
        X : array-like of shape (n_samples, 4 + n_p)

        Returns
        -------
        u : ndarray of shape (n_samples,)
        """
        check_is_fitted(self, "gain_")
        X = check_array(X, dtype=float)
        n_p = self.gain_.n_p
        if X.shape[1] != self.n_x + n_p:
            raise DimensionError(f"expected {self.n_x + n_p} columns, got {X.shape[1]}")
        return policy_apply(self.gain_, X[:, : self.n_x], X[:, self.n_x :])

    def control(self, x, p):
        """Control current for a single state and parameter vector."""
        check_is_fitted(self, "gain_")
        return float(policy_apply(self.gain_, x, p))

    def save(self, path):
        check_is_fitted(self, "gain_")
        save_gain(path, self.gain_, self.weights_, self.gain_.n_p, self._weights_normalized)

    def to_document(self):
        check_is_fitted(self, "gain_")
        return gain_document(self.gain_, self.weights_, self.gain_.n_p, self._weights_normalized)


class ADPTrackingController(_PolicyMixin, BaseEstimator):
    """Model-free tracking controller learned by least-squares policy iteration.

    Parameters
    ----------
    n_p : int, default=3
        Reference basis dimension the tuples were built with.
    gamma : float, default=0.9
        Discount factor.
    state_cost : array-like, default=(800, 0, 400, 0)
        Diagonal (or full 4x4 matrix) of the state cost, applied to the
        normalised tuples.
    control_cost : float, default=1.0
    normalization : float, default=10.0
        Factor ``V_N`` applied to states and reference parameters before
        training.
    tol : float, default=1e-6
        Stopping threshold on ``||w_l - w_{l-1}||_2``.
    max_iter : int, default=100
    ridge : float, default=1e-8
        Tikhonov term added to the LSTDQ system matrix.
    initial_weight : float, default=1.0
        Value of every entry of the initial weight vector.
    fit_offset : bool, default=True
        Include the constant entry in ``z`` so a static offset current
        can be learned.
    n_jobs : int, default=1
        Threads for the LSTDQ accumulation.

    Attributes
    ----------
    gain_ : GainMatrix
        Renormalised control law in physical units.
    normalized_gain_ : GainMatrix
        Control law acting on normalised inputs.
    weights_ : ndarray
        Q-function weights in normalised coordinates.
    trace_ : TrainingTrace
    n_iter_ : int
    converged_ : bool
    bellman_residual_ : float
        Mean absolute TD residual relative to the mean stage cost.
    """

    _weights_normalized = True

    def __init__(
        self,
        n_p=3,
        gamma=0.9,
        state_cost=(800.0, 0.0, 400.0, 0.0),
        control_cost=1.0,
        normalization=10.0,
        tol=1e-6,
        max_iter=100,
        ridge=1e-8,
        initial_weight=1.0,
        fit_offset=True,
        n_jobs=1,
    ):
        self.n_p = n_p
        self.gamma = gamma
        self.state_cost = state_cost
        self.control_cost = control_cost
        self.normalization = normalization
        self.tol = tol
        self.max_iter = max_iter
        self.ridge = ridge
        self.initial_weight = initial_weight
        self.fit_offset = fit_offset
        self.n_jobs = n_jobs

    def train_config(self):
        return TrainConfig(
            gamma=self.gamma,
            Qmat=_cost_matrix(self.state_cost),
            R=self.control_cost,
            eps=self.tol,
            max_iter=self.max_iter,
            ridge=self.ridge,
            V_N=self.normalization,
            w0=self.initial_weight,
        )

    def fit(self, X, y=None):
        """Run policy iteration on a batch of tuples in physical units.

        Parameters
        ----------
        X : TupleBatch
            Recorded transitions paired with reference parameters.
        y : None
            Ignored.

        Returns
        -------
        self
        """
        if not isinstance(X, TupleBatch):
            raise TypeError("fit expects a TupleBatch")
        if X.n_p != self.n_p:
            raise DimensionError(f"batch has {X.n_p} reference parameters, expected {self.n_p}")
        cfg = self.train_config()
        batch = normalize(X, cfg.V_N)
        L, w, trace = policy_iterate(batch, cfg, offset=self.fit_offset, n_jobs=self.n_jobs)
        self.normalized_gain_ = L
        self.gain_ = renormalize_gain(L, cfg.V_N)
        self.weights_ = w
        self.trace_ = trace
        self.n_iter_ = trace.iterations
        self.converged_ = trace.converged
        self.bellman_residual_ = bellman_residual(w, L, batch, cfg, self.fit_offset)
        if not trace.converged:
            warnings.warn(
                f"policy iteration stopped after {trace.iterations} iterations with "
                f"delta {trace.deltas[-1]:.3g} > tol = {self.tol:g}",
                ConvergenceWarning,
            )
        return self

    def q_value(self, x, u, p):
        """Learned Q-function at physical ``(x, u, p)``."""
        check_is_fitted(self, "weights_")
        V = self.normalization
        return q_value(self.weights_, np.asarray(x) * V, u, np.asarray(p) * V, self.fit_offset)


class ModelBasedTrackingController(_PolicyMixin, BaseEstimator):
    """Discounted LQ tracking controller computed from a known linear model.

    Parameters
    ----------
    n_p : int, default=3
    dt : float, default=0.04
        Sampling time of the reference basis.
    gamma : float, default=0.9
    state_cost : array-like, default=(80000, 0, 40000, 0)
        State cost in physical units.  The default equals the learned
        controller's default cost on data normalised by 10.
    control_cost : float, default=1.0
    disturbance : float, default=0.0
        Input disturbance assumed by the model.
    tol : float, default=1e-10
    max_iter : int, default=100000

    Attributes
    ----------
    gain_ : GainMatrix
    solution_ : RiccatiSolution
    weights_ : ndarray
        Q-function weights of the optimal controller in physical units.
    """

    _weights_normalized = False

    def __init__(
        self,
        n_p=3,
        dt=0.04,
        gamma=0.9,
        state_cost=(80000.0, 0.0, 40000.0, 0.0),
        control_cost=1.0,
        disturbance=0.0,
        tol=1e-10,
        max_iter=100_000,
    ):
        self.n_p = n_p
        self.dt = dt
        self.gamma = gamma
        self.state_cost = state_cost
        self.control_cost = control_cost
        self.disturbance = disturbance
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        """Solve the Riccati recursion for the model ``X``.

        Parameters
        ----------
        X : LinearModel or PlantParams
        y : None
            Ignored.
        """
        model = X if isinstance(X, LinearModel) else LinearModel.from_plant(X)
        spec = BasisSpec(self.n_p, self.dt)
        aug = augment(model, spec, self.disturbance)
        self.solution_ = solve_discounted_lqt(
            aug,
            _cost_matrix(self.state_cost),
            self.control_cost,
            self.gamma,
            spec,
            tol=self.tol,
            max_iter=self.max_iter,
        )
        self.gain_ = self.solution_.gain
        self.weights_ = H_to_weights(self.solution_.H)
        self.n_iter_ = self.solution_.iterations
        return self
