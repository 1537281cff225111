"""End-to-end experiment: plan, identify from closed-loop data, compare feedforward laws.

Each command writes its artifacts into an output directory and returns the
in-memory results. All outputs except ``runtime.json`` are deterministic.
"""

import contextlib
import csv
import json
import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInputError, LpvffError
from .feedforward import ff_dynamic_lpv, ff_lti, ff_static_lpv, true_theta
from .identify import (
    IdentifiedModel,
    build_regressors,
    build_target,
    config_hash,
    default_gamma,
    identified_theta_functions,
    predict_theta,
    solve,
)
from .kernel import build_gram, optimize_hyperparameters
from .plant import LeadController, check_stability, simulate_closed_loop
from .signals import SampledSignal, rms, write_csv
from .trajectory import SchedulingSequence, plan_fourth_order, scheduling_from_reference

__all__ = [
    "IdentificationWarning",
    "IdentificationResult",
    "ResultsReport",
    "plan_reference",
    "cmd_plan",
    "cmd_identify",
    "cmd_compare",
    "scheduling_excitation_warning",
]

log = logging.getLogger(__name__)

LAWS = ("lti", "static", "dynamic")


class IdentificationWarning(UserWarning):
    """The training data cannot inform part of the model."""


@contextlib.contextmanager
def _stage(name):
    """Prefix errors raised inside a pipeline stage with its name."""
    try:
        yield
    except LpvffError as exc:
        if exc.args and not str(exc.args[0]).startswith(f"{name}:"):
            exc.args = (f"{name}: {exc.args[0]}",) + exc.args[1:]
        raise


def _out_dir(out):
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def plan_reference(config, start=None, end=None):
    traj = config.trajectory
    return plan_fourth_order(
        traj.start if start is None else start,
        traj.end if end is None else end,
        traj.bounds,
        traj.sample_period,
        align_to_samples=traj.align_to_samples,
    )


def cmd_plan(config, out=None):
    """Plan the configured move and export ``reference.csv``."""
    with _stage("plan"):
        bundle = plan_reference(config)
    out = _out_dir(out)
    if out is not None:
        bundle.to_csv(out / "reference.csv")
    log.info("planned %d samples, snap %.6g", len(bundle), bundle.snap)
    return bundle


def _controller(config):
    c = config.controller
    return LeadController.tuned(config.plant, c.crossover_hz, c.ratio, c.tuning_rho)


def _scheduling(config, bundle, frozen=None):
    if frozen is not None:
        return SchedulingSequence.frozen(frozen, len(bundle), bundle.sample_period)
    return scheduling_from_reference(bundle, config.plant.L)


def _check_loop(config, ctrl, sched):
    rho = sched.rho.values
    lo, hi = float(np.min(rho)), float(np.max(rho))
    check_stability(config.plant, ctrl, sched.rho.sample_period, (lo, hi), 13 if hi > lo else 1)


def scheduling_excitation_warning(rho, spec, length=1.0):
    """Warn when the training scheduling barely moves but the kernel has rho-dependent blocks.

    Returns True if a warning was issued.
    """
    rho = np.asarray(getattr(rho, "values", rho), dtype=float)
    varying = [i for i, b in enumerate(spec.blocks) if b.kind != "constant"]
    if varying and np.ptp(rho) <= 1e-6 * length:
        msg = (
            f"scheduling is frozen at {rho[0]:.6g} during training; blocks {[i + 1 for i in varying]} "
            "have no scheduling excitation and their rho dependence is not identifiable "
            "(ill-conditioned problem)"
        )
        warnings.warn(msg, IdentificationWarning, stacklevel=2)
        log.warning(msg)
        return True
    return False


@dataclass
class IdentificationResult:
    model: IdentifiedModel
    record: object
    log_ml: float
    theta_errors: dict
    timings: dict = field(default_factory=dict)


def _theta_grid(config, rho_train):
    lo, hi = float(np.min(rho_train)), float(np.max(rho_train))
    return np.linspace(lo, hi, config.identification.theta_grid_points)


def _theta_errors(config, model, rho_train):
    """Max and RMS relative error of each predicted parameter against the physical model."""
    basis = config.basis
    try:
        truth = true_theta(config.plant, basis)
    except InvalidInputError:
        return {}
    margin = config.identification.theta_error_margin
    lo, hi = float(np.min(rho_train)) + margin, float(np.max(rho_train)) - margin
    rho = np.linspace(lo, hi, 50) if hi > lo else np.array([float(np.mean(rho_train))])
    pred = predict_theta(model, rho).values
    true_vals, _, _ = truth.evaluate(rho)
    out = {}
    for i, name in enumerate(basis.names()):
        rel = np.abs(pred[i] / true_vals[i] - 1.0)
        out[name] = {
            "max_relative_error": float(np.max(rel)),
            "rms_relative_error": float(np.sqrt(np.mean(rel**2))),
            "rho_interval": [float(rho[0]), float(rho[-1])],
        }
    return out


def cmd_identify(config, out=None):
    """Collect closed-loop training data and identify the scheduled parameters.

    Writes ``model.json``, ``training.csv``, ``theta.csv`` and
    ``identify_report.json``.
    """
    ident = config.identification
    basis = config.basis
    plant = config.plant
    timings = {}
    t0 = time.perf_counter()

    with _stage("training reference"):
        bundle = plan_reference(config)
        sched = _scheduling(config, bundle, ident.frozen_rho)
    scheduling_excitation_warning(sched.rho, config.kernel, plant.L)

    with _stage("training simulation"):
        ctrl = _controller(config)
        _check_loop(config, ctrl, sched)
        if ident.training_feedforward == "lti":
            try:
                baseline = true_theta(plant, basis).at(ident.training_rho)
            except InvalidInputError as exc:
                raise ConfigError(f"LTI training feedforward needs a physical basis: {exc}") from exc
            u_ff = ff_lti(bundle, baseline, basis).u_ff
        else:
            u_ff = SampledSignal.zeros(len(bundle), bundle.sample_period)
        record = simulate_closed_loop(plant, ctrl, bundle, sched, u_ff, config.controller.oversampling)
    timings["training_simulation_s"] = time.perf_counter() - t0

    with _stage("regression"):
        y = record.y
        if ident.remove_output_offset:
            y = y - y.values[0]
        Phi = build_regressors(y, basis)
        w_bar = build_target(record.u)
        spec = config.kernel
        if ident.gamma_policy == "fixed":
            gamma = ident.gamma_value
        else:
            K0 = build_gram(spec, sched.rho)
            gamma = default_gamma(Phi, K0, ident.gamma_scale)
        log_ml = None
        search_gamma = ident.gamma_policy == "search"
        if spec.free_parameters() or search_gamma:
            t1 = time.perf_counter()
            search = config.search
            if not search_gamma:
                search = replace(search, gamma_range=None)
            result = optimize_hyperparameters(spec, Phi, w_bar, gamma, sched.rho, search)
            spec, gamma, log_ml = result.spec, result.gamma, result.log_ml
            timings["hyperparameter_search_s"] = time.perf_counter() - t1
            log.info("hyperparameters: %s, gamma %.3e, log evidence %.6g", spec.to_dict(), gamma, log_ml)
        K = build_gram(spec, sched.rho)
        model = solve(Phi, K, gamma, w_bar, length=plant.L, provenance=config_hash(config.to_ini()))
    timings["identification_s"] = time.perf_counter() - t0

    errors = _theta_errors(config, model, sched.rho.values)
    out = _out_dir(out)
    if out is not None:
        model.to_json(out / "model.json")
        write_csv(
            out / "training.csv",
            bundle.sample_period,
            {
                "r": record.r,
                "y": record.y,
                "e": record.e,
                "u": record.u,
                "u_fb": record.u_fb,
                "u_ff": record.u_ff,
                "rho": sched.rho,
            },
        )
        _write_theta_csv(out / "theta.csv", config, model, sched.rho.values)
        _write_json(
            out / "identify_report.json",
            {
                "kernel": spec.to_dict(),
                "gamma": gamma,
                "gamma_policy": ident.gamma_policy,
                "log_marginal_likelihood": log_ml,
                "samples": len(bundle),
                "theta_errors": errors,
                "provenance": model.provenance,
            },
        )
    return IdentificationResult(model, record, log_ml, errors, timings)


def _write_theta_csv(path, config, model, rho_train):
    """Predicted parameters and derivatives on a dense rho grid, with the physical values."""
    rho = _theta_grid(config, rho_train)
    pred = predict_theta(model, rho)
    names = config.basis.names()
    try:
        truth = true_theta(config.plant, config.basis).evaluate(rho)
    except InvalidInputError:
        truth = None
    header = ["rho"]
    cols = [rho]
    for i, name in enumerate(names):
        header += [f"{name}_hat", f"d{name}_hat", f"dd{name}_hat"]
        cols += [pred.values[i], pred.d1[i], pred.d2[i]]
        if truth is not None:
            header += [f"{name}_true", f"d{name}_true", f"dd{name}_true"]
            cols += [truth[0][i], truth[1][i], truth[2][i]]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(rho.size):
            writer.writerow([repr(float(c[k])) for c in cols])


@dataclass
class ResultsReport:
    rms: dict
    ratios: dict
    theta_errors: dict
    hyperparameters: dict
    reference: dict
    runtime: dict = field(default_factory=dict)

    def to_dict(self):
        """Deterministic part of the report (runtime is written separately)."""
        return {
            "rms": self.rms,
            "ratios": self.ratios,
            "theta_errors": self.theta_errors,
            "hyperparameters": self.hyperparameters,
            "reference": self.reference,
        }


def _u_dyn_surface(theta, rho, drho, ddrho, ddr, dddr, index):
    """Scheduling-rate part of the second derivative of ``theta_i(rho) * r''``."""
    _, d1, d2 = theta.evaluate(rho)
    return (ddrho * d1[index] + drho**2 * d2[index]) * ddr + 2 * drho * d1[index] * dddr


def cmd_compare(config, model, out=None, theta_errors=None):
    """Closed-loop comparison of the LTI, static LPV and dynamic LPV feedforward.

    Writes per-law ``sim_<law>.csv`` and ``ff_<law>.csv``, the figure data
    ``fig3_error.csv``, ``fig4_contribution.csv``, ``fig5_snap.csv``,
    ``fig6_surface.csv``, and ``report.json`` plus ``runtime.json``.
    """
    t0 = time.perf_counter()
    basis = config.basis
    if model.basis is not None and model.basis.orders != basis.orders:
        raise ConfigError(
            f"model basis ({model.basis.descriptor()}) does not match config basis ({basis.descriptor()})"
        )
    plant = config.plant
    cmp = config.compare
    with _stage("evaluation reference"):
        if cmp.validation:
            bundle = plan_reference(config, cmp.validation_start, cmp.validation_end)
        else:
            bundle = plan_reference(config)
        sched = _scheduling(config, bundle)
    ctrl = _controller(config)
    with _stage("stability check"):
        _check_loop(config, ctrl, sched)

    theta_hat = identified_theta_functions(model, basis.names())
    thetas = {"": theta_hat}
    truth = None
    if cmp.true_theta_rows:
        try:
            truth = true_theta(plant, basis)
            thetas["_true"] = truth
        except InvalidInputError:
            log.warning("no physical parameters for this basis; skipping true-theta rows")

    sims, ffs = {}, {}
    with _stage("comparison simulation"):
        for suffix, theta in thetas.items():
            laws = {
                "lti": ff_lti(bundle, theta.at(cmp.lti_rho), basis),
                "static": ff_static_lpv(bundle, sched, theta, basis),
                "dynamic": ff_dynamic_lpv(bundle, sched, theta, basis),
            }
            for law, ff in laws.items():
                name = law + suffix
                ffs[name] = ff
                sims[name] = simulate_closed_loop(plant, ctrl, bundle, sched, ff.u_ff, config.controller.oversampling)

    rms_values = {name: rms(rec.e) for name, rec in sims.items()}
    ratios = {
        "lti_over_static": rms_values["lti"] / rms_values["static"],
        "static_over_dynamic": rms_values["static"] / rms_values["dynamic"],
    }
    if truth is not None:
        ratios["dynamic_identified_over_true"] = rms_values["dynamic"] / rms_values["dynamic_true"]
    if theta_errors is None:
        theta_errors = _theta_errors(config, model, model.rho_train.values)
    report = ResultsReport(
        rms=rms_values,
        ratios=ratios,
        theta_errors=theta_errors,
        hyperparameters={"kernel": model.spec.to_dict(), "gamma": model.gamma},
        reference={
            "samples": len(bundle),
            "sample_period": bundle.sample_period,
            "start": float(bundle.r.values[0]),
            "end": float(bundle.r.values[-1]),
            "snap": bundle.snap,
            "controller": {"gain": ctrl.gain, "zero_rad_s": ctrl.zero_freq, "pole_rad_s": ctrl.pole_freq},
        },
    )
    report.runtime = {"compare_s": time.perf_counter() - t0}

    out = _out_dir(out)
    if out is not None:
        ts = bundle.sample_period
        for name in sims:
            sims[name].to_csv(out / f"sim_{name}.csv")
            ffs[name].to_csv(out / f"ff_{name}.csv")
        write_csv(out / "fig3_error.csv", ts, {f"e_{name}": sims[name].e for name in sims})
        write_csv(
            out / "fig4_contribution.csv",
            ts,
            {"u_dyn": ffs["dynamic"].u_dyn, "u_ff": ffs["dynamic"].u_ff},
        )
        if 2 in basis.orders:
            _write_snap(out / "fig5_snap.csv", bundle, sched, theta_hat, basis.orders.index(2))
            _write_surface(out / "fig6_surface.csv", config, model, theta_hat, truth, basis.orders.index(2))
        _write_json(out / "report.json", report.to_dict())
        _write_json(out / "runtime.json", report.runtime)
    return report


def _write_snap(path, bundle, sched, theta, index):
    """Snap feedforward term of the static law against the full second derivative."""
    vals, _, _ = theta.evaluate(sched.rho.values)
    static = vals[index] * bundle.ddddr.values
    dyn = static + _u_dyn_surface(
        theta, sched.rho.values, sched.drho.values, sched.ddrho.values,
        bundle.ddr.values, bundle.dddr.values, index,
    )
    write_csv(path, bundle.sample_period, {"static_snap": static, "dynamic_snap": dyn})


def _write_surface(path, config, model, theta_hat, truth, index):
    """u_dyn of the snap term over (rho, drho), with rho'' equal to the reference r''."""
    cmp = config.compare
    rho_train = model.rho_train.values
    rho = np.linspace(float(np.min(rho_train)), float(np.max(rho_train)), cmp.surface_rho_points)
    drho = np.linspace(-cmp.surface_drho_max, cmp.surface_drho_max, cmp.surface_drho_points)
    R, D = np.meshgrid(rho, drho, indexing="ij")
    R, D = R.ravel(), D.ravel()
    est = _u_dyn_surface(theta_hat, R, D, cmp.surface_ddr, cmp.surface_ddr, cmp.surface_dddr, index)
    cols = {"rho": R, "drho": D, "u_dyn_est": est}
    if truth is not None:
        cols["u_dyn_true"] = _u_dyn_surface(truth, R, D, cmp.surface_ddr, cmp.surface_ddr, cmp.surface_dddr, index)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(cols))
        for k in range(R.size):
            writer.writerow([repr(float(c[k])) for c in cols.values()])
