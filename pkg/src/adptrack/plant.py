"""Simulated single axis of a ball-on-plate rig.

Small-angle linearisation, per axis::

    s' = v,   v' = k_ball * g * alpha,   alpha' = omega,   omega' = c_u * (u + d)

with state ``[s, v, alpha, omega]`` and motor current ``u`` in amperes.
``d`` is a constant input-equivalent disturbance modelling plate
imbalance.  The chain is nilpotent, so its zero-order-hold discretisation
is a finite matrix polynomial and is computed exactly.
"""

import csv
from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.linalg

from .exceptions import DimensionError, NumericalFailure, PlateEdgeContact
from .reference import PLATE_HALF_WIDTH

__all__ = [
    "STATE_NAMES",
    "PlantParams",
    "ExcitationConfig",
    "PlantData",
    "continuous_model",
    "discretize",
    "step",
    "measure",
    "stabilizing_gain",
    "collect_data",
    "smooth",
]

STATE_NAMES = ("s", "v", "alpha", "omega")


@dataclass(frozen=True)
class PlantParams:
    g: float = 9.81
    k_ball: float = 5.0 / 7.0
    c_u: float = 4.0
    d: float = 0.0
    dt: float = 0.04
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.c_u == 0:
            raise ValueError("c_u must be non-zero")
        if not 0 < self.k_ball <= 1:
            raise ValueError("k_ball must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def continuous_model(params):
    A = np.zeros((4, 4))
    A[0, 1] = 1.0
    A[1, 2] = params.k_ball * params.g
    A[2, 3] = 1.0
    B = np.array([0.0, 0.0, 0.0, params.c_u])
    return A, B


def discretize(params):
    """Exact ZOH matrices ``(A_d, B_d)``.

    ``expm([[A, B], [0, 0]] dt)`` truncates after the fifth term because
    the 5x5 block matrix is nilpotent of index 5.
    """
    A, B = continuous_model(params)
    M = np.zeros((5, 5))
    M[:4, :4] = A
    M[:4, 4] = B
    Mh = M * params.dt
    E = np.eye(5)
    term = np.eye(5)
    for k in range(1, 5):
        term = term @ Mh
        E = E + term / factorial(k)
    return E[:4, :4], E[:4, 4]


def step(x, u, params, model=None):
    """One sampling period: ``A_d x + B_d (u + d)``.

    Pass a precomputed ``model=(A_d, B_d)`` to skip re-discretising.
    Edge contact is not handled here; see :func:`on_plate`.
    """
    A, B = discretize(params) if model is None else model
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 4:
        raise DimensionError("plant state has four entries")
    return x @ A.T + np.multiply.outer(np.asarray(u, dtype=float) + params.d, B)


def on_plate(x):
    return abs(float(x[0])) <= PLATE_HALF_WIDTH


def measure(x, params, rng):
    """Noisy measurement of ``x``; exact when ``noise_sigma == 0``."""
    if params.noise_sigma == 0 or rng is None:
        return np.array(x, dtype=float)
    return x + params.noise_sigma * rng.standard_normal(np.shape(x))


def stabilizing_gain(params, weights=(200.0, 5.0, 10.0, 0.1), r=1.0):
    """A conservative stabilising state feedback for data collection.

    Stands in for the rig's inner plate-angle controller; it only has to
    keep the ball on the plate, not be optimal.
    """
    A, B = discretize(params)
    B = B[:, None]
    P = scipy.linalg.solve_discrete_are(A, B, np.diag(weights), np.array([[r]]))
    return np.linalg.solve(r + B.T @ P @ B, B.T @ P @ A).ravel()


@dataclass(frozen=True)
class ExcitationConfig:
    """Synthetic excitation replacing manual interaction with the rig.

    The applied current is a stabilising feedback (with integral action on
    the ball position, as an operator would correct a drifting ball) plus a
    sum of sines with seeded random phases plus uniform noise, clipped to
    ``+-amplitude_bound``.  ``duration`` covers the recorded transitions.
    """

    duration: float = 48.0
    amplitude_bound: float = 3.0
    sine_amplitudes: tuple = (0.8, 0.6, 0.4)
    sine_frequencies: tuple = (0.11, 0.29, 0.67)
    noise_amplitude: float = 1.0
    seed: int = 0
    feedback: tuple = field(default=None)
    integral_gain: float = 2.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.amplitude_bound < 0 or self.noise_amplitude < 0:
            raise ValueError("amplitudes must be non-negative")
        if len(self.sine_amplitudes) != len(self.sine_frequencies):
            raise DimensionError("sine amplitudes and frequencies differ in length")


@dataclass
class PlantData:
    """Recorded trajectory: ``states[k]``, ``controls[k]`` and ``states[k+1]``."""

    states: np.ndarray
    controls: np.ndarray
    dt: float = 0.04

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != 4:
            raise DimensionError("states must have shape (N + 1, 4)")
        if self.controls.shape != (self.states.shape[0] - 1,):
            raise DimensionError("need exactly one control per transition")

    def __len__(self):
        return self.controls.shape[0]

    def smoothed(self, window):
        """Moving average over states and controls, dropping the warm-up.

        The first ``window - 1`` entries only average a prefix; they are
        cut so that every kept transition is an average of full windows.
        """
        if window == 1:
            return PlantData(self.states.copy(), self.controls.copy(), self.dt)
        x = smooth(self.states, window)
        u = smooth(self.controls, window)
        return PlantData(x[window - 1 :], u[window - 1 :], self.dt)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", *STATE_NAMES, "u"])
            for k, x in enumerate(self.states):
                u = repr(float(self.controls[k])) if k < len(self) else "nan"
                writer.writerow([k, *(repr(float(v)) for v in x), u])

    @classmethod
    def from_csv(cls, path, dt=0.04):
        """Read ``k, s, v, alpha, omega, u`` rows (the last ``u`` is ignored)."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) < 2:
            raise DimensionError(f"{path}: need at least two samples")
        missing = {"k", *STATE_NAMES, "u"} - set(rows[0])
        if missing:
            raise DimensionError(f"{path}: missing columns {sorted(missing)}")
        rows.sort(key=lambda r: int(r["k"]))
        states = np.array([[float(r[n]) for n in STATE_NAMES] for r in rows])
        controls = np.array([float(r["u"]) for r in rows[:-1]])
        return cls(states, controls, dt)


def collect_data(excitation, params, x0=None):
    """Excite the plant and record ``duration / dt`` transitions.

    Deterministic for a given ``excitation.seed``.

    Raises
    ------
    PlateEdgeContact
        If the ball leaves the plate; ``partial`` holds the data so far.
    """
    rng = np.random.default_rng(excitation.seed)
    n = int(round(excitation.duration / params.dt))
    model = discretize(params)
    K = (
        stabilizing_gain(params)
        if excitation.feedback is None
        else np.asarray(excitation.feedback, dtype=float)
    )
    amps = np.asarray(excitation.sine_amplitudes, dtype=float)
    freqs = np.asarray(excitation.sine_frequencies, dtype=float)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=amps.size)
    t = np.arange(n) * params.dt
    feedforward = np.sin(2.0 * np.pi * np.outer(t, freqs) + phases) @ amps
    feedforward = feedforward + rng.uniform(-1.0, 1.0, size=n) * excitation.noise_amplitude
    noise_rng = np.random.default_rng([excitation.seed, 1])

    x = np.zeros(4) if x0 is None else np.asarray(x0, dtype=float)
    states = np.empty((n + 1, 4))
    controls = np.empty(n)
    states[0] = measure(x, params, noise_rng)
    integral = 0.0
    for k in range(n):
        u = -K @ states[k] - excitation.integral_gain * integral + feedforward[k]
        integral += states[k, 0] * params.dt
        u = float(np.clip(u, -excitation.amplitude_bound, excitation.amplitude_bound))
        controls[k] = u
        x = step(x, u, params, model)
        if not np.all(np.isfinite(x)):
            raise NumericalFailure(f"non-finite plant state at step {k + 1}")
        states[k + 1] = measure(x, params, noise_rng)
        if not on_plate(x):
            partial = PlantData(states[: k + 2], controls[: k + 1], params.dt)
            raise PlateEdgeContact(
                f"ball reached s = {x[0]:.3f} m at step {k + 1} during excitation",
                step=k + 1,
                partial=partial,
            )
    return PlantData(states, controls, params.dt)


def smooth(sequence, window):
    """Trailing moving average along the first axis.

    Entry ``k`` averages samples ``max(0, k - window + 1) .. k``.
    """
    a = np.asarray(sequence, dtype=float)
    if a.shape[0] == 0:
        raise ValueError("cannot smooth an empty sequence")
    if window < 1:
        raise ValueError("window must be at least 1")
    if window == 1:
        return a.copy()
    out = a.copy()
    for lag in range(1, window):
        out[lag:] += a[:-lag]
    counts = np.minimum(np.arange(1, a.shape[0] + 1), window).astype(float)
    return out / counts.reshape((-1,) + (1,) * (a.ndim - 1))
