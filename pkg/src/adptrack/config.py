"""Flat experiment configuration stored as YAML.

Every key is a scalar or a list of numbers; unknown keys are rejected so a
mistyped hyperparameter cannot silently fall back to its default.
"""

from dataclasses import asdict, dataclass, field, fields

import yaml

from .exceptions import ConfigError
from .reference import PLATE_HALF_WIDTH, TRAINING_AMPLITUDES, TRAINING_FREQUENCIES

__all__ = ["ExperimentConfig", "REFERENCE_KINDS", "load_config", "save_config"]

REFERENCE_KINDS = ("sine-step", "composite", "rectangle-2d")


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs"

    # plant (one axis; d_y is the Y-axis imbalance used by rect2d)
    g: float = 9.81
    k_ball: float = 5.0 / 7.0
    c_u: float = 4.0
    d: float = 0.0
    d_y: float = 0.0
    dt: float = 0.04
    noise_sigma: float = 0.0

    # policy iteration
    gamma: float = 0.9
    state_cost: list = field(default_factory=lambda: [800.0, 0.0, 400.0, 0.0])
    control_cost: float = 1.0
    normalization: float = 10.0
    tol: float = 1e-6
    max_iter: int = 100
    ridge: float = 1e-8
    initial_weight: float = 1.0
    fit_offset: bool = True
    n_jobs: int = 1

    # reference approximation
    n_p: int = 3
    beta: float = 0.8
    horizon: int = 10
    setpoint_horizon: int = 1

    # data
    n_tuples: int = 1200
    smoothing_window: int = 5
    excitation_amplitude_bound: float = 3.0
    excitation_sine_amplitudes: list = field(default_factory=lambda: [0.8, 0.6, 0.4])
    excitation_sine_frequencies: list = field(default_factory=lambda: [0.11, 0.29, 0.67])
    excitation_noise: float = 1.0
    excitation_integral_gain: float = 2.0
    training_amplitudes: list = field(default_factory=lambda: list(TRAINING_AMPLITUDES))
    training_frequencies: list = field(default_factory=lambda: list(TRAINING_FREQUENCIES))

    # validation
    reference: str = "sine-step"
    reference_amplitude: float = 0.15
    repetitions: int = 5
    offset_disturbance: float = -2.2
    offset_step_amplitude: float = 0.1
    offset_step_hold: float = 6.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.reference not in REFERENCE_KINDS:
            raise ConfigError(f"reference must be one of {REFERENCE_KINDS}, got {self.reference!r}")
        if self.n_p not in (1, 3):
            raise ConfigError("n_p must be 1 or 3")
        if len(self.state_cost) != 4:
            raise ConfigError("state_cost needs four diagonal entries")
        if len(self.excitation_sine_amplitudes) != len(self.excitation_sine_frequencies):
            raise ConfigError("excitation sine amplitudes and frequencies differ in length")
        if len(self.training_amplitudes) != len(self.training_frequencies):
            raise ConfigError("training amplitudes and frequencies differ in length")
        for name in ("reference_amplitude", "offset_step_amplitude"):
            if abs(getattr(self, name)) > PLATE_HALF_WIDTH:
                raise ConfigError(f"{name} leaves the plate (+-{PLATE_HALF_WIDTH} m)")
        if sum(abs(a) for a in self.training_amplitudes) > PLATE_HALF_WIDTH:
            raise ConfigError("training reference can leave the plate")
        positive = ("dt", "normalization", "tol", "max_iter", "horizon", "setpoint_horizon",
                    "n_tuples", "smoothing_window", "repetitions", "n_jobs")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping of keys to values")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        kwargs = {}
        for name, value in data.items():
            default = known[name].default
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{name} must be true or false")
            elif isinstance(default, int) and not isinstance(default, bool):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{name} must be an integer")
            elif isinstance(default, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{name} must be a number")
                value = float(value)
            elif isinstance(default, str):
                if not isinstance(value, str):
                    raise ConfigError(f"{name} must be a string")
            else:
                if not isinstance(value, list) or not all(
                    isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
                ):
                    raise ConfigError(f"{name} must be a list of numbers")
                value = [float(v) for v in value]
            kwargs[name] = value
        return cls(**kwargs)


def load_config(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ExperimentConfig.from_dict(data)


def save_config(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
