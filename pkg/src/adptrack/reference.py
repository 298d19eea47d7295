"""Local polynomial approximation of desired reference trajectories.

At every step ``k`` the upcoming window of desired positions is replaced
by a low-order polynomial in time, ``r(p_k, i) = p_k @ rho(i)``.  The
parameter vector is ordered highest degree first, ``[p2, p1, p0]`` for the
quadratic basis and ``[p0]`` for the constant (setpoint) basis.  Shifting
the local time origin by ``i`` steps is the linear map ``p -> T(i).T @ p``.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import AmplitudeError, DimensionError, RankDeficiencyError

__all__ = [
    "PLATE_HALF_WIDTH",
    "BasisSpec",
    "FitConfig",
    "ReferenceSignal",
    "ReferenceApproximator",
    "eval_basis",
    "eval_ref",
    "shift_matrix",
    "fit_params",
    "fit_projection",
    "fit_reference_params",
    "propagate_params",
    "make_sine_step",
    "make_validation_composite",
    "make_training_reference",
    "make_rectangle_2d",
]

PLATE_HALF_WIDTH = 0.5

# Training reference constants: three incommensurate sines, peak <= 0.2 m.
TRAINING_AMPLITUDES = (0.10, 0.06, 0.04)
TRAINING_FREQUENCIES = (0.10, 0.23, 0.41)


@dataclass(frozen=True)
class BasisSpec:
    """Polynomial basis of dimension ``n_p`` sampled every ``dt`` seconds."""

    n_p: int = 3
    dt: float = 0.04

    def __post_init__(self):
        if self.n_p not in (1, 3):
            raise ValueError(f"n_p must be 1 or 3, got {self.n_p}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


@dataclass(frozen=True)
class FitConfig:
    """Discount ``beta`` and horizon ``h_r`` of the weighted LS fit."""

    beta: float = 0.8
    h_r: int = 10

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.h_r < 1:
            raise ValueError(f"h_r must be at least 1, got {self.h_r}")


def eval_basis(spec, i):
    """Basis vector ``rho(i)``: ``[(i dt)^2, i dt, 1]`` or ``[1]``."""
    if i < 0:
        raise ValueError("step index must be non-negative")
    if spec.n_p == 1:
        return np.ones(1)
    t = i * spec.dt
    return np.array([t * t, t, 1.0])


def _basis_matrix(spec, n):
    # rows rho(0) .. rho(n-1)
    t = np.arange(n) * spec.dt
    if spec.n_p == 1:
        return np.ones((n, 1))
    return np.column_stack([t * t, t, np.ones(n)])


def eval_ref(p, spec, i):
    """Desired position ``p @ rho(i)`` of the local approximation."""
    p = np.asarray(p, dtype=float)
    if p.shape != (spec.n_p,):
        raise DimensionError(f"expected {spec.n_p} parameters, got shape {p.shape}")
    return float(p @ eval_basis(spec, i))


def shift_matrix(spec, i):
    """Matrix ``T(i)`` with ``p @ T(i) @ rho(j) == p @ rho(i + j)``."""
    if i < 0:
        raise ValueError("step index must be non-negative")
    if spec.n_p == 1:
        return np.ones((1, 1))
    s = i * spec.dt
    return np.array(
        [
            [1.0, 2.0 * s, s * s],
            [0.0, 1.0, s],
            [0.0, 0.0, 1.0],
        ]
    )


def propagate_params(p, spec, i):
    """Parameters of the same polynomial seen ``i`` steps later.

    Works row-wise on a stack of parameter vectors as well.
    """
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != spec.n_p:
        raise DimensionError(f"expected {spec.n_p} parameters, got shape {p.shape}")
    return p @ shift_matrix(spec, i)


def fit_projection(cfg, spec):
    """Return the ``(n_p, h_r)`` matrix mapping a window onto its LS parameters.

    Solved through a QR factorisation of the row-weighted basis matrix
    rather than the explicit normal-matrix inverse.
    """
    if cfg.h_r < spec.n_p:
        raise RankDeficiencyError(
            f"horizon h_r={cfg.h_r} is shorter than the basis dimension {spec.n_p}"
        )
    P = _basis_matrix(spec, cfg.h_r)
    sw = np.sqrt(cfg.beta ** np.arange(cfg.h_r))
    Q, R = np.linalg.qr(sw[:, None] * P)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-12 * max(diag.max(), 1.0):
        raise RankDeficiencyError("weighted basis matrix is rank deficient")
    # p = R^-1 Q^T diag(sw) r
    return solve_triangular(R, Q.T) * sw[None, :]


def fit_params(window, cfg, spec):
    """Weighted least-squares parameters for one window of ``h_r`` samples."""
    window = np.asarray(window, dtype=float)
    if window.shape != (cfg.h_r,):
        raise DimensionError(f"window must have length {cfg.h_r}, got {window.shape}")
    return fit_projection(cfg, spec) @ window


def _windows(samples, h_r):
    # windows starting at every index, padded by holding the last sample
    padded = np.concatenate([samples, np.full(h_r - 1, samples[-1])])
    return np.lib.stride_tricks.sliding_window_view(padded, h_r)


def fit_reference_params(samples, cfg, spec):
    """Fit ``p_k`` for every index of a sampled reference; shape ``(n, n_p)``."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1 or samples.size == 0:
        raise DimensionError("reference samples must be a non-empty 1-D array")
    return _windows(samples, cfg.h_r) @ fit_projection(cfg, spec).T


@dataclass
class ReferenceSignal:
    """Desired ball positions sampled at ``dt``.

    ``samples`` has shape ``(n,)`` for one axis or ``(n, 2)`` for the
    plate's X and Y axes.
    """

    samples: np.ndarray
    dt: float = 0.04
    name: str = field(default="reference", compare=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim not in (1, 2):
            raise DimensionError("reference samples must be 1-D or 2-D")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def times(self):
        return np.arange(len(self)) * self.dt

    @property
    def is_2d(self):
        return self.samples.ndim == 2

    def axis(self, i):
        """One axis of a 2-D reference as its own signal."""
        if not self.is_2d:
            raise DimensionError("axis() needs a 2-D reference")
        return ReferenceSignal(self.samples[:, i], self.dt, f"{self.name}[{'XY'[i]}]")

    def window(self, k, h_r):
        """``h_r`` samples from index ``k``, padded by holding the last value."""
        idx = np.minimum(np.arange(k, k + h_r), len(self) - 1)
        return self.samples[idx]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if self.is_2d:
                writer.writerow(["k", "t", "rx", "ry"])
                for k, (t, row) in enumerate(zip(self.times, self.samples)):
                    writer.writerow([k, repr(float(t)), repr(float(row[0])), repr(float(row[1]))])
            else:
                writer.writerow(["k", "t", "r"])
                for k, (t, r) in enumerate(zip(self.times, self.samples)):
                    writer.writerow([k, repr(float(t)), repr(float(r))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise DimensionError(f"{path} holds no samples")
        t = np.array([float(r["t"]) for r in rows])
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.04
        if "rx" in rows[0]:
            samples = np.array([[float(r["rx"]), float(r["ry"])] for r in rows])
        else:
            samples = np.array([float(r["r"]) for r in rows])
        return cls(samples, dt)


def _check_on_plate(samples):
    peak = float(np.max(np.abs(samples))) if np.size(samples) else 0.0
    if peak > PLATE_HALF_WIDTH:
        raise AmplitudeError(
            f"reference reaches {peak:.3f} m, outside the plate (+-{PLATE_HALF_WIDTH} m)"
        )


def _check_amplitude(amplitude):
    if abs(amplitude) > PLATE_HALF_WIDTH:
        raise AmplitudeError(f"amplitude {amplitude} exceeds the plate half-width")


def make_sine_step(amplitude=0.15, hold=4.0, transition=0.8, n_steps=4, dt=0.04, lead=1.0):
    """Steps alternating between ``+amplitude`` and ``-amplitude``.

    Starts at 0 for ``lead`` seconds; each level change is a half-cosine
    blend lasting ``transition`` seconds, followed by a plateau of ``hold``
    seconds.
    """
    _check_amplitude(amplitude)
    if hold <= 0 or transition <= 0 or n_steps < 1:
        raise ValueError("hold, transition and n_steps must be positive")
    n_lead = int(round(lead / dt))
    n_tr = max(int(round(transition / dt)), 1)
    n_hold = int(round(hold / dt))
    parts = [np.zeros(n_lead)]
    level = 0.0
    blend = 0.5 * (1.0 - np.cos(np.pi * np.arange(1, n_tr + 1) / n_tr))
    for j in range(n_steps):
        target = amplitude if j % 2 == 0 else -amplitude
        parts.append(level + (target - level) * blend)
        parts.append(np.full(n_hold, target))
        level = target
    return ReferenceSignal(np.concatenate(parts), dt, "sine-step")


def make_training_reference(
    duration=48.0, dt=0.04, amplitudes=TRAINING_AMPLITUDES, frequencies=TRAINING_FREQUENCIES
):
    """Sum of sines used to populate the reference parameters of the tuples."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    amplitudes = np.asarray(amplitudes, dtype=float)
    frequencies = np.asarray(frequencies, dtype=float)
    if amplitudes.shape != frequencies.shape:
        raise DimensionError("amplitudes and frequencies must have equal length")
    _check_amplitude(float(np.abs(amplitudes).sum()))
    t = np.arange(int(round(duration / dt))) * dt
    r = np.sin(2.0 * np.pi * np.outer(t, frequencies)) @ amplitudes
    return ReferenceSignal(r, dt, "training")


def make_validation_composite(duration=40.0, dt=0.04, scale=1.0):
    """Overlaid sines, steps and ramps for out-of-sample validation."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    t = np.arange(int(round(duration / dt))) * dt
    frac = t / duration
    r = 0.06 * np.sin(2.0 * np.pi * 0.15 * t) + 0.03 * np.sin(2.0 * np.pi * 0.37 * t + 0.5)
    # steps
    r += np.select([frac < 0.2, frac < 0.45, frac < 0.6], [0.0, 0.12, -0.1], 0.0)
    # ramp up then back down in the last stretch
    ramp = np.clip((frac - 0.6) / 0.2, 0.0, 1.0) - np.clip((frac - 0.85) / 0.15, 0.0, 1.0)
    r += 0.15 * ramp
    r *= scale
    _check_on_plate(r)
    return ReferenceSignal(r, dt, "composite")


def make_rectangle_2d(half_width=0.2, half_height=0.15, side_time=4.0, corner_hold=1.0, laps=1, dt=0.04):
    """Rectangle traversed at constant speed, pausing at each corner."""
    _check_amplitude(half_width)
    _check_amplitude(half_height)
    corners = np.array(
        [
            [half_width, half_height],
            [-half_width, half_height],
            [-half_width, -half_height],
            [half_width, -half_height],
        ]
    )
    n_side = max(int(round(side_time / dt)), 1)
    n_hold = int(round(corner_hold / dt))
    s = np.arange(1, n_side + 1)[:, None] / n_side
    parts = [np.tile(corners[-1], (n_hold, 1))]
    prev = corners[-1]
    for _ in range(laps):
        for c in corners:
            parts.append(prev + (c - prev) * s)
            parts.append(np.tile(c, (n_hold, 1)))
            prev = c
    return ReferenceSignal(np.vstack(parts), dt, "rectangle-2d")


class ReferenceApproximator(TransformerMixin, BaseEstimator):
    """Transform a sampled reference into per-step polynomial parameters.

    Parameters
    ----------
    n_p : int, default=3
        Basis dimension, 3 for the quadratic trajectory basis or 1 for a
        setpoint.
    dt : float, default=0.04
        Sampling time in seconds.
    beta : float, default=0.8
        Discount of the fit weights ``diag(1, beta, ..., beta^(h_r-1))``.
    horizon : int, default=10
        Number of future samples ``h_r`` entering each fit.

    Attributes
    ----------
    projection_ : ndarray of shape (n_p, horizon)
        Linear map from a window of samples to its parameters.
    """

    def __init__(self, n_p=3, dt=0.04, beta=0.8, horizon=10):
        self.n_p = n_p
        self.dt = dt
        self.beta = beta
        self.horizon = horizon

    @property
    def basis_(self):
        return BasisSpec(self.n_p, self.dt)

    def fit(self, X=None, y=None):
        self.projection_ = fit_projection(FitConfig(self.beta, self.horizon), self.basis_)
        return self

    def transform(self, X):
        """Parameters ``p_k`` for each sample of ``X``.

        Parameters
        ----------
        X : array-like of shape (n_samples,) or (n_samples, 1)
            Desired positions, or a :class:`ReferenceSignal`.

        Returns
        -------
        P : ndarray of shape (n_samples, n_p)
        """
        check_is_fitted(self, "projection_")
        if isinstance(X, ReferenceSignal):
            X = X.samples
        X = np.asarray(X, dtype=float)
        if X.ndim == 2 and X.shape[1] == 1:
            X = X[:, 0]
        if X.ndim != 1:
            raise DimensionError("expected a single reference channel")
        if not np.all(np.isfinite(X)):
            raise ValueError("reference contains non-finite values")
        return _windows(X, self.horizon) @ self.projection_.T

    def propagate(self, P, i=1):
        """Shift stacked parameters ``P`` forward by ``i`` steps."""
        return propagate_params(P, self.basis_, i)
