"""End-to-end experiments on the simulated plate.

Training follows collect -> smooth -> fit reference parameters ->
propagate -> assemble tuples -> normalise -> policy iteration ->
renormalise.  Validation rolls the resulting affine feedback out on a
reference and records the undiscounted running cost.  All functions are
deterministic given the configuration and its seed.
"""

import csv
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from .baseline import LinearModel
from .config import save_config
from .controllers import ADPTrackingController, ModelBasedTrackingController
from .exceptions import AdpTrackError, DimensionError, PlateEdgeContact
from .lspi import TrainConfig, assemble_tuples, stage_cost
from .plant import (
    STATE_NAMES,
    ExcitationConfig,
    PlantParams,
    collect_data,
    discretize,
    measure,
    on_plate,
    step,
)
from .qfunc import load_gain, policy_apply
from .reference import (
    BasisSpec,
    FitConfig,
    fit_reference_params,
    make_rectangle_2d,
    make_sine_step,
    make_training_reference,
    make_validation_composite,
)

__all__ = [
    "Rollout",
    "plant_params",
    "basis",
    "fit_config",
    "cost_config",
    "excitation",
    "collect",
    "training_batch",
    "train_controller",
    "model_controller",
    "make_reference",
    "rollout",
    "plateau_errors",
    "relative_difference",
    "run_collect",
    "run_train",
    "run_validate",
    "run_compare",
    "run_rect2d",
]


# --- configuration plumbing -------------------------------------------------


def plant_params(cfg, d=None):
    return PlantParams(
        g=cfg.g,
        k_ball=cfg.k_ball,
        c_u=cfg.c_u,
        d=cfg.d if d is None else d,
        dt=cfg.dt,
        noise_sigma=cfg.noise_sigma,
    )


def basis(cfg, n_p=None):
    return BasisSpec(cfg.n_p if n_p is None else n_p, cfg.dt)


def fit_config(cfg, n_p=None):
    """Quadratic basis fits ``horizon`` samples; the setpoint basis ``setpoint_horizon``."""
    n_p = cfg.n_p if n_p is None else n_p
    return FitConfig(cfg.beta, cfg.horizon if n_p == 3 else cfg.setpoint_horizon)


def cost_config(cfg):
    """Stage cost in physical units matching training on normalised tuples."""
    Q = np.diag(cfg.state_cost) * cfg.normalization**2
    return TrainConfig(gamma=cfg.gamma, Qmat=Q, R=cfg.control_cost, V_N=1.0)


def excitation(cfg, seed=None):
    # window - 1 extra samples are consumed by the smoothing warm-up
    n = cfg.n_tuples + cfg.smoothing_window - 1
    return ExcitationConfig(
        duration=n * cfg.dt,
        amplitude_bound=cfg.excitation_amplitude_bound,
        sine_amplitudes=tuple(cfg.excitation_sine_amplitudes),
        sine_frequencies=tuple(cfg.excitation_sine_frequencies),
        noise_amplitude=cfg.excitation_noise,
        seed=cfg.seed if seed is None else seed,
        integral_gain=cfg.excitation_integral_gain,
    )


def collect(cfg, d=None, seed=None):
    """Raw excitation data (before smoothing)."""
    return collect_data(excitation(cfg, seed), plant_params(cfg, d))


def training_reference(cfg):
    n = cfg.n_tuples + max(cfg.horizon, cfg.setpoint_horizon)
    return make_training_reference(
        duration=n * cfg.dt,
        dt=cfg.dt,
        amplitudes=cfg.training_amplitudes,
        frequencies=cfg.training_frequencies,
    )


def training_batch(cfg, n_p=None, d=None, data=None):
    """Physical-unit tuples for the basis ``n_p`` from smoothed plant data."""
    if data is None:
        data = collect(cfg, d)
    data = data.smoothed(cfg.smoothing_window)
    if len(data) < cfg.n_tuples:
        raise DimensionError(f"only {len(data)} transitions after smoothing, need {cfg.n_tuples}")
    data = type(data)(data.states[: cfg.n_tuples + 1], data.controls[: cfg.n_tuples], data.dt)
    spec = basis(cfg, n_p)
    P = fit_reference_params(training_reference(cfg).samples, fit_config(cfg, n_p), spec)
    return assemble_tuples(data, P, spec)


def make_estimator(cfg, n_p=None, fit_offset=None):
    return ADPTrackingController(
        n_p=cfg.n_p if n_p is None else n_p,
        gamma=cfg.gamma,
        state_cost=tuple(cfg.state_cost),
        control_cost=cfg.control_cost,
        normalization=cfg.normalization,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        ridge=cfg.ridge,
        initial_weight=cfg.initial_weight,
        fit_offset=cfg.fit_offset if fit_offset is None else fit_offset,
        n_jobs=cfg.n_jobs,
    )


def train_controller(cfg, n_p=None, d=None, fit_offset=None, data=None):
    """Learn a tracking controller on data from the plant with imbalance ``d``."""
    batch = training_batch(cfg, n_p, d, data)
    return make_estimator(cfg, n_p, fit_offset).fit(batch)


def model_controller(cfg, n_p=None, d=None):
    """Riccati solution for the same plant and the equivalent physical cost."""
    return ModelBasedTrackingController(
        n_p=cfg.n_p if n_p is None else n_p,
        dt=cfg.dt,
        gamma=cfg.gamma,
        state_cost=tuple(np.asarray(cfg.state_cost) * cfg.normalization**2),
        control_cost=cfg.control_cost,
        disturbance=cfg.d if d is None else d,
    ).fit(LinearModel.from_plant(plant_params(cfg, d)))


def make_reference(cfg, kind=None):
    kind = cfg.reference if kind is None else kind
    if kind == "sine-step":
        return make_sine_step(amplitude=cfg.reference_amplitude, dt=cfg.dt)
    if kind == "composite":
        return make_validation_composite(dt=cfg.dt, scale=cfg.reference_amplitude / 0.15)
    if kind == "rectangle-2d":
        return make_rectangle_2d(dt=cfg.dt)
    raise ValueError(f"unknown reference {kind!r}")


# --- closed-loop rollout ----------------------------------------------------


@dataclass
class Rollout:
    """Closed-loop trajectory; ``states[k]`` is the state when ``controls[k]`` is applied."""

    reference: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    cost: np.ndarray
    dt: float = 0.04

    @property
    def cum_cost(self):
        return np.cumsum(self.cost)

    @property
    def error(self):
        return self.states[:, 0] - self.reference

    def __len__(self):
        return self.controls.shape[0]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "t", "r", *STATE_NAMES, "u", "cost", "cum_cost"])
            cum = self.cum_cost
            for k in range(len(self)):
                row = [self.reference[k], *self.states[k], self.controls[k], self.cost[k], cum[k]]
                writer.writerow([k, repr(k * self.dt), *(repr(float(v)) for v in row)])


def rollout(gain, reference, params, spec, fit_cfg, cost_cfg, rng=None, x0=None):
    """Run ``u_k = -(L_x x_k + L_ref p_k + L_off)`` along ``reference``.

    Parameters
    ----------
    gain : GainMatrix
        Feedback in physical units.
    reference : array-like of shape (n,)
        Desired positions.
    params : PlantParams
    spec : BasisSpec
    fit_cfg : FitConfig
        Reference fit used online to build ``p_k``.
    cost_cfg : TrainConfig
        Stage-cost weights; cost is charged against the true reference.
    rng : numpy.random.Generator, optional
        Measurement-noise source when ``params.noise_sigma > 0``.
    x0 : array-like, optional
        Initial state, zero by default.

    Raises
    ------
    PlateEdgeContact
        ``partial`` holds the rollout up to the contact.
    """
    r = np.asarray(reference, dtype=float)
    if r.ndim != 1:
        raise DimensionError("rollout expects a single reference axis")
    if gain.n_p != spec.n_p:
        raise DimensionError(f"gain uses n_p={gain.n_p}, basis has n_p={spec.n_p}")
    P = fit_reference_params(r, fit_cfg, spec)
    model = discretize(params)
    n = r.size
    states = np.empty((n, 4))
    controls = np.empty(n)
    x = np.zeros(4) if x0 is None else np.asarray(x0, dtype=float)
    for k in range(n):
        states[k] = x
        controls[k] = policy_apply(gain, measure(x, params, rng), P[k])
        x = step(x, controls[k], params, model)
        if not on_plate(x):
            m = k + 1
            partial = Rollout(r[:m], states[:m], controls[:m], stage_cost(states[:m], controls[:m], r[:m], cost_cfg), params.dt)
            raise PlateEdgeContact(f"ball reached s = {x[0]:.3f} m at step {k + 1}", step=k + 1, partial=partial)
    cost = stage_cost(states, controls, r, cost_cfg)
    return Rollout(r, states, controls, cost, params.dt)


def plateau_ends(reference):
    """Indices of the last sample of each non-zero constant stretch."""
    r = np.asarray(reference)
    n = r.size
    return np.array(
        [k for k in range(1, n) if r[k] == r[k - 1] and r[k] != 0 and (k == n - 1 or r[k + 1] != r[k])],
        dtype=int,
    )


def plateau_errors(ro):
    """Signed tracking errors at the end of each step plateau."""
    idx = plateau_ends(ro.reference)
    return ro.reference[idx], ro.error[idx]


def relative_difference(a, b, floor=1e-3):
    """``|a - b| / max(|b|, floor * max|b|)`` elementwise.

    The floor keeps entries that are zero in ``b`` (such as ``L_off``
    without imbalance) from dividing by zero.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.abs(b), floor * max(np.abs(b).max(), np.finfo(float).tiny))
    return np.abs(a - b) / denom


# --- workflows writing files ------------------------------------------------


def _prepare(out, cfg):
    os.makedirs(out, exist_ok=True)
    save_config(cfg, os.path.join(out, "config.yaml"))


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _fit_quiet(fn, *args, **kwargs):
    # non-convergence is reported through the estimator's converged_ flag
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return fn(*args, **kwargs)


def run_collect(cfg, out):
    """Write the raw excitation data and the training reference."""
    _prepare(out, cfg)
    data = collect(cfg)
    data.to_csv(os.path.join(out, "data.csv"))
    training_reference(cfg).to_csv(os.path.join(out, "training_reference.csv"))
    return data


def run_train(cfg, out, data=None):
    """Train on ``cfg`` and write ``gain.json`` and ``trace.csv``."""
    _prepare(out, cfg)
    est = _fit_quiet(train_controller, cfg, data=data)
    est.save(os.path.join(out, "gain.json"))
    est.trace_.to_csv(os.path.join(out, "trace.csv"))
    return est


def _rollout_repetitions(cfg, gain, reference, d):
    params = plant_params(cfg, d)
    spec = BasisSpec(gain.n_p, cfg.dt)
    fit_cfg = fit_config(cfg, gain.n_p)
    cc = cost_config(cfg)

    def one(rep):
        rng = np.random.default_rng([cfg.seed, rep])
        return rollout(gain, reference, params, spec, fit_cfg, cc, rng)

    reps = range(cfg.repetitions)
    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            return list(pool.map(one, reps))
    return [one(rep) for rep in reps]


def _write_summary(path, runs):
    s = np.stack([ro.states[:, 0] for ro in runs])
    u = np.stack([ro.controls for ro in runs])
    c = np.stack([ro.cum_cost for ro in runs])
    ref = runs[0].reference
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "t", "r", "s_mean", "s_std", "u_mean", "u_std", "cum_cost_mean", "cum_cost_std"])
        for k in range(ref.size):
            vals = [ref[k], s[:, k].mean(), s[:, k].std(), u[:, k].mean(), u[:, k].std(), c[:, k].mean(), c[:, k].std()]
            writer.writerow([k, repr(k * runs[0].dt), *(repr(float(v)) for v in vals)])


def _label(path):
    return os.path.splitext(os.path.basename(path))[0]


def run_validate(cfg, gain_paths, out):
    """Roll every gain out ``repetitions`` times on the configured reference.

    Returns ``{label: final mean accumulated cost}``.
    """
    if cfg.reference == "rectangle-2d":
        return run_rect2d(cfg, gain_paths, out)
    _prepare(out, cfg)
    reference = make_reference(cfg)
    reference.to_csv(os.path.join(out, "reference.csv"))
    if not gain_paths:
        est = _fit_quiet(train_controller, cfg)
        est.save(os.path.join(out, "gain.json"))
        gains = [("gain", est.gain_)]
    else:
        gains = [(_label(p), load_gain(p)[0]) for p in gain_paths]
    summary = {}
    for label, gain in gains:
        runs = _rollout_repetitions(cfg, gain, reference.samples, cfg.d)
        for rep, ro in enumerate(runs):
            ro.to_csv(os.path.join(out, f"validate_{label}_rep{rep}.csv"))
        _write_summary(os.path.join(out, f"validate_{label}_summary.csv"), runs)
        summary[label] = float(np.mean([ro.cum_cost[-1] for ro in runs]))
    _write_json(os.path.join(out, "validate_summary.json"), summary)
    write_plot_stub(out)
    return summary


def _offset_section(cfg, out):
    d = cfg.offset_disturbance
    cc = cost_config(cfg)
    params = plant_params(cfg, d)
    spec = BasisSpec(1, cfg.dt)
    fit_cfg = fit_config(cfg, 1)
    steps = make_sine_step(amplitude=cfg.offset_step_amplitude, hold=cfg.offset_step_hold, dt=cfg.dt)

    with_offset = _fit_quiet(train_controller, cfg, n_p=1, d=d, fit_offset=True)
    with_offset.save(os.path.join(out, "gain_offset.json"))
    section = {
        "disturbance": d,
        "learned_L_off": with_offset.gain_.L_off,
        "L_off_relative_error": abs(with_offset.gain_.L_off - d) / abs(d) if d else None,
        "converged_with_offset": bool(with_offset.converged_),
    }

    # the constant-free basis cannot represent the biased data set
    try:
        _fit_quiet(train_controller, cfg, n_p=1, d=d, fit_offset=False)
        section["offset_free_on_imbalanced_data"] = "trained"
    except AdpTrackError as exc:
        section["offset_free_on_imbalanced_data"] = f"failed: {exc}"

    no_offset = _fit_quiet(train_controller, cfg, n_p=1, d=0.0, fit_offset=False)
    no_offset.save(os.path.join(out, "gain_no_offset.json"))

    errors = {}
    for label, est in (("with_offset", with_offset), ("without_offset", no_offset)):
        ro = rollout(est.gain_, steps.samples, params, spec, fit_cfg, cc)
        ro.to_csv(os.path.join(out, f"offset_steps_{label}.csv"))
        levels, err = plateau_errors(ro)
        errors[label] = {
            "mean_abs_error": float(np.mean(np.abs(err))),
            "error_at_positive_steps": float(np.mean(err[levels > 0])),
            "error_at_negative_steps": float(np.mean(err[levels < 0])),
        }
    section["steady_state"] = errors
    section["error_ratio"] = errors["with_offset"]["mean_abs_error"] / errors["without_offset"]["mean_abs_error"]
    return section


def run_compare(cfg, out):
    """Learned versus model-based gains, setpoint versus trajectory, offset learning."""
    _prepare(out, cfg)
    cc = cost_config(cfg)
    reference = make_reference(cfg, "sine-step") if cfg.reference == "rectangle-2d" else make_reference(cfg)
    reference.to_csv(os.path.join(out, "reference.csv"))
    params = plant_params(cfg)
    data = collect(cfg)

    adp = _fit_quiet(train_controller, cfg, data=data)
    model = model_controller(cfg)
    adp.save(os.path.join(out, "gain_adp.json"))
    model.save(os.path.join(out, "gain_model.json"))
    adp.trace_.to_csv(os.path.join(out, "trace.csv"))
    rel = relative_difference(adp.gain_.as_array(), model.gain_.as_array())
    report = {
        "gain_adp": adp.gain_.as_array().tolist(),
        "gain_model": model.gain_.as_array().tolist(),
        "relative_difference": rel.tolist(),
        "max_relative_difference": float(rel.max()),
        "iterations": adp.n_iter_,
        "converged": bool(adp.converged_),
        "bellman_residual": adp.bellman_residual_,
    }
    costs = {}
    for label, est in (("adp", adp), ("model", model)):
        ro = rollout(est.gain_, reference.samples, params, basis(cfg), fit_config(cfg), cc)
        ro.to_csv(os.path.join(out, f"compare_{label}.csv"))
        costs[label] = float(ro.cum_cost[-1])
    report["final_cost"] = costs

    tracking = {}
    for n_p in (3, 1):
        est = adp if n_p == cfg.n_p else _fit_quiet(train_controller, cfg, n_p=n_p, data=data)
        ro = rollout(est.gain_, reference.samples, params, BasisSpec(n_p, cfg.dt), fit_config(cfg, n_p), cc)
        ro.to_csv(os.path.join(out, f"tracking_np{n_p}.csv"))
        tracking[f"n_p={n_p}"] = float(ro.cum_cost[-1])
    tracking["ratio"] = tracking["n_p=3"] / tracking["n_p=1"]
    report["trajectory_vs_setpoint"] = tracking

    report["offset"] = _offset_section(cfg, out)
    _write_json(os.path.join(out, "compare_report.json"), report)
    write_plot_stub(out)
    return report, adp


def run_rect2d(cfg, gain_paths, out):
    """Track the rectangle with independent X (imbalance ``d``) and Y (``d_y``) controllers."""
    _prepare(out, cfg)
    ref = make_reference(cfg, "rectangle-2d")
    ref.to_csv(os.path.join(out, "reference.csv"))
    disturbances = (cfg.d, cfg.d_y)
    if gain_paths:
        if len(gain_paths) != 2:
            raise DimensionError("rect2d takes exactly two gains (X then Y)")
        gains = [load_gain(p)[0] for p in gain_paths]
    else:
        ests = [_fit_quiet(train_controller, cfg, d=dd) for dd in disturbances]
        for axis, est in zip("xy", ests):
            est.save(os.path.join(out, f"gain_{axis}.json"))
        gains = [est.gain_ for est in ests]
    cc = cost_config(cfg)

    def axis_run(i):
        g = gains[i]
        return rollout(
            g,
            ref.samples[:, i],
            plant_params(cfg, disturbances[i]),
            BasisSpec(g.n_p, cfg.dt),
            fit_config(cfg, g.n_p),
            cc,
            np.random.default_rng([cfg.seed, i]),
        )

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            runs = list(pool.map(axis_run, (0, 1)))
    else:
        runs = [axis_run(0), axis_run(1)]
    cum = runs[0].cum_cost + runs[1].cum_cost
    with open(os.path.join(out, "rect2d.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "t", "rx", "ry", "sx", "sy", "ux", "uy", "cum_cost"])
        for k in range(len(ref)):
            vals = [ref.samples[k, 0], ref.samples[k, 1], runs[0].states[k, 0], runs[1].states[k, 0],
                    runs[0].controls[k], runs[1].controls[k], cum[k]]
            writer.writerow([k, repr(k * cfg.dt), *(repr(float(v)) for v in vals)])
    summary = {"x": float(runs[0].cum_cost[-1]), "y": float(runs[1].cum_cost[-1])}
    _write_json(os.path.join(out, "rect2d_summary.json"), summary)
    write_plot_stub(out)
    return summary


_PLOT_STUB = '''"""Plot the CSV files in this directory (requires matplotlib)."""
import csv
import glob
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))


def read(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {key: [float(r[key]) for r in rows] for key in rows[0]}


fig, (ax_s, ax_c) = plt.subplots(2, 1, sharex=True)
for path in sorted(glob.glob(os.path.join(here, "*.csv"))):
    cols = read(path)
    name = os.path.basename(path)[:-4]
    if "s" in cols and "cum_cost" in cols:
        ax_s.plot(cols["t"], cols["s"], label=name)
        ax_c.plot(cols["t"], cols["cum_cost"], label=name)
    elif "s_mean" in cols:
        ax_s.plot(cols["t"], cols["s_mean"], label=name)
        ax_c.plot(cols["t"], cols["cum_cost_mean"], label=name)
    elif "sx" in cols:
        plt.figure()
        plt.plot(cols["rx"], cols["ry"], "k--")
        plt.plot(cols["sx"], cols["sy"])
        plt.axis("equal")
ax_s.set_ylabel("s [m]")
ax_c.set_ylabel("accumulated cost")
ax_c.set_xlabel("t [s]")
ax_s.legend(fontsize="small")
plt.show()
'''


def write_plot_stub(out):
    with open(os.path.join(out, "plot_results.py"), "w") as fh:
        fh.write(_PLOT_STUB)
