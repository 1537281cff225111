"""Closed-loop simulation of the position-dependent two-mass-spring-damper.

Mass 1 is driven by the force ``u`` and connected to mass 2 through a
spring ``k(rho)`` and a damper ``c``; mass 2 has a weak damper ``c2`` to the
world and its position is the measured output ``y``. The spring stiffness
follows ``k(rho) = E*A / (rho*(L - rho))`` with ``rho`` supplied from outside.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import InstabilityError, InvalidInputError, SchedulingError
from .signals import (
    SampledSignal,
    differentiate,
    integrate,
    rms,
    write_csv,
)

__all__ = [
    "PlantParams",
    "LeadController",
    "SimulationRecord",
    "stiffness",
    "stiffness_d1",
    "stiffness_d2",
    "frozen_state_space",
    "closed_loop_spectral_radius",
    "check_stability",
    "simulate_closed_loop",
    "io_residual",
    "foh_double_integral",
]


@dataclass(frozen=True)
class PlantParams:
    """Physical constants. ``constant_stiffness`` replaces k(rho) when set."""

    m1: float = 1.0
    m2: float = 0.5
    c: float = 1.0
    c2: float = 1e-4
    E: float = 0.24e9
    A: float = 1e-5
    L: float = 1.0
    constant_stiffness: float = None

    def __post_init__(self):
        for name in ("m1", "m2", "c", "c2", "E", "A", "L"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidInputError(f"plant parameter {name} must be positive, got {value!r}")
        if self.constant_stiffness is not None and not self.constant_stiffness > 0:
            raise InvalidInputError("constant_stiffness must be positive")

    @property
    def EA(self):
        return self.E * self.A


def _check_rho(params, rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(~(rho > 0)) or np.any(~(rho < params.L)):
        raise SchedulingError(f"rho must lie in (0, {params.L}); got range "
                              f"[{np.min(rho)!r}, {np.max(rho)!r}]")
    return rho


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def stiffness(params, rho):
    """Spring stiffness k(rho) in N/m."""
    rho = _check_rho(params, rho)
    if params.constant_stiffness is not None:
        return _scalar_or_array(np.full_like(rho, params.constant_stiffness))
    return _scalar_or_array(params.EA / (rho * (params.L - rho)))


def stiffness_d1(params, rho):
    """dk/drho in (N/m)/m."""
    rho = _check_rho(params, rho)
    if params.constant_stiffness is not None:
        return _scalar_or_array(np.zeros_like(rho))
    g = rho * (params.L - rho)
    return _scalar_or_array(-params.EA * (params.L - 2 * rho) / g**2)


def stiffness_d2(params, rho):
    """d2k/drho2 in (N/m)/m^2."""
    rho = _check_rho(params, rho)
    if params.constant_stiffness is not None:
        return _scalar_or_array(np.zeros_like(rho))
    g = rho * (params.L - rho)
    dg = params.L - 2 * rho
    return _scalar_or_array(params.EA * (2 * dg**2 + 2 * g) / g**3)


def frozen_state_space(params, rho):
    """(A, B, C, D) of the plant for frozen rho, state [x1, v1, x2, v2]."""
    m1, m2, c, c2 = params.m1, params.m2, params.c, params.c2
    k = stiffness(params, rho)
    A = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [-k / m1, -c / m1, k / m1, c / m1],
            [0.0, 0.0, 0.0, 1.0],
            [k / m2, c / m2, -k / m2, -(c + c2) / m2],
        ]
    )
    B = np.array([[0.0], [1.0 / m1], [0.0], [0.0]])
    C = np.array([[0.0, 0.0, 1.0, 0.0]])
    D = np.zeros((1, 1))
    return A, B, C, D


@dataclass(frozen=True)
class LeadController:
    """C(s) = gain * (s/zero_freq + 1) / (s/pole_freq + 1), frequencies in rad/s."""

    gain: float
    zero_freq: float
    pole_freq: float

    def __post_init__(self):
        if not self.gain > 0:
            raise InvalidInputError("lead gain must be positive")
        if not 0 < self.zero_freq < self.pole_freq:
            raise InvalidInputError("lead filter needs 0 < zero_freq < pole_freq")

    @classmethod
    def tuned(cls, params, crossover_hz=2.0, ratio=3.0, rho=0.5):
        """Zero at wc/ratio, pole at wc*ratio, unit loop gain at wc for frozen rho."""
        wc = 2 * math.pi * crossover_hz
        zero, pole = wc / ratio, wc * ratio
        A, B, C, D = frozen_state_space(params, rho)
        plant_resp = (C @ np.linalg.solve(1j * wc * np.eye(4) - A, B) + D)[0, 0]
        lead_shape = (1j * wc / zero + 1) / (1j * wc / pole + 1)
        gain = 1.0 / abs(plant_resp * lead_shape)
        return cls(float(gain), zero, pole)

    def transfer_function(self):
        num = self.gain * np.array([1.0 / self.zero_freq, 1.0])
        den = np.array([1.0 / self.pole_freq, 1.0])
        return num, den

    def discretize(self, sample_period):
        """Tustin difference-equation coefficients (b, a) with a[0] == 1."""
        # first-order Tustin map written out; s = (2/T) (z - 1) / (z + 1)
        q = 2.0 / sample_period
        tz, tp = q / self.zero_freq, q / self.pole_freq
        b = self.gain * np.array([tz + 1.0, 1.0 - tz])
        a = np.array([tp + 1.0, 1.0 - tp])
        return b / a[0], a / a[0]


def closed_loop_spectral_radius(params, ctrl, rho, sample_period):
    """Largest closed-loop pole magnitude for frozen rho, ZOH plant and Tustin lead."""
    A, B, C, D = frozen_state_space(params, rho)
    Ad, Bd, Cd, _, _ = signal.cont2discrete((A, B, C, D), sample_period, method="zoh")
    b, a = ctrl.discretize(sample_period)
    # first-order controller realization: x+ = -a1 x + e, u = (b1 - a1 b0) x + b0 e
    Ac = np.array([[-a[1]]])
    Bc = np.array([[1.0]])
    Cc = np.array([[b[1] - a[1] * b[0]]])
    Dc = np.array([[b[0]]])
    top = np.hstack([Ad - Bd @ Dc @ Cd, Bd @ Cc])
    bottom = np.hstack([-Bc @ Cd, Ac])
    return float(np.max(np.abs(np.linalg.eigvals(np.vstack([top, bottom])))))


def check_stability(params, ctrl, sample_period, rho_range=(0.2, 0.8), points=13):
    """Raise InstabilityError unless the loop is stable at every frozen rho."""
    for rho in np.linspace(*rho_range, points):
        radius = closed_loop_spectral_radius(params, ctrl, rho, sample_period)
        if radius >= 1.0:
            raise InstabilityError(
                f"closed loop unstable at frozen rho={rho:.3f} (spectral radius {radius:.6f})"
            )


@dataclass(frozen=True, eq=False)
class SimulationRecord:
    r: SampledSignal
    y: SampledSignal
    u: SampledSignal
    e: SampledSignal
    u_fb: SampledSignal
    u_ff: SampledSignal

    def to_csv(self, path):
        write_csv(
            path,
            self.y.sample_period,
            {"r": self.r, "y": self.y, "e": self.e, "u": self.u, "u_fb": self.u_fb, "u_ff": self.u_ff},
        )


def _hermite(values, slopes, h, frac):
    """Cubic Hermite interpolation between samples at fractional offsets ``frac``."""
    p0, p1 = values[:-1, None], values[1:, None]
    m0, m1 = slopes[:-1, None] * h, slopes[1:, None] * h
    s = frac[None, :]
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1


def simulate_closed_loop(
    params,
    ctrl,
    bundle,
    sched,
    u_ff,
    oversampling=10,
    divergence_bound=1e3,
):
    """Simulate the loop u = C(r - y) + u_ff around the plant.

    Parameters
    ----------
    params : PlantParams
    ctrl : LeadController or None
        Feedback controller, discretized with Tustin at the sample period.
        ``None`` runs the plant open loop (u_fb = 0).
    bundle : ReferenceBundle
        Reference; ``r(0)`` is also the initial position of both masses.
    sched : SchedulingSequence
        Scheduling trajectory; between samples it is reconstructed by cubic
        Hermite interpolation from ``rho`` and ``drho``.
    u_ff : SampledSignal
        Feedforward force. It is precomputed, so it is reconstructed by
        linear interpolation between samples; the feedback force is held
        constant over each sample interval.
    oversampling : int
        Fixed-step RK4 substeps per sample period.
    divergence_bound : float
        Any state magnitude above this raises InstabilityError.

    Returns
    -------
    SimulationRecord
    """
    n = len(bundle)
    ts = bundle.sample_period
    for name, sig in (("rho", sched.rho), ("drho", sched.drho), ("u_ff", u_ff)):
        if len(sig) != n or sig.sample_period != ts:
            raise InvalidInputError(f"{name} does not match the reference grid")
    if n < 2:
        raise InvalidInputError("simulation needs at least two samples")
    if int(oversampling) != oversampling or oversampling < 1:
        raise InvalidInputError("oversampling must be a positive integer")
    oversampling = int(oversampling)
    _check_rho(params, sched.rho.values)

    m = oversampling
    h = ts / m
    # half-step grid inside each sample interval: fractions 0, 1/(2m), ..., (2m-1)/(2m)
    frac = np.arange(2 * m) / (2 * m)
    rho_fine = _hermite(sched.rho.values, sched.drho.values, ts, frac)
    rho_fine = np.append(rho_fine.ravel(), sched.rho.values[-1])
    k_fine = np.asarray(stiffness(params, np.clip(rho_fine, 1e-12, params.L - 1e-12)), dtype=float)
    uff = u_ff.values
    uff_fine = (uff[:-1, None] * (1 - frac[None, :]) + uff[1:, None] * frac[None, :]).ravel()
    uff_fine = np.append(uff_fine, uff[-1])
    k_fine = k_fine.tolist()
    uff_fine = uff_fine.tolist()

    m1, m2, c, c2 = params.m1, params.m2, params.c, params.c2
    inv_m1, inv_m2 = 1.0 / m1, 1.0 / m2

    if ctrl is not None:
        b, a = ctrl.discretize(ts)
        b0, b1 = float(b[0]), float(b[1])
        a1 = float(a[1])
    else:
        b0 = b1 = a1 = 0.0

    r = bundle.r.values
    y = np.empty(n)
    u_fb = np.empty(n)
    x1 = x2 = float(r[0])
    v1 = v2 = 0.0
    e_prev = 0.0
    ufb_prev = 0.0

    def accel(x1, v1, x2, v2, k, f):
        spring = k * (x1 - x2) + c * (v1 - v2)
        return (f - spring) * inv_m1, (spring - c2 * v2) * inv_m2

    for i in range(n):
        y[i] = x2
        e = r[i] - x2
        ufb = b0 * e + b1 * e_prev - a1 * ufb_prev
        u_fb[i] = ufb
        e_prev, ufb_prev = e, ufb
        if abs(x1) > divergence_bound or abs(x2) > divergence_bound or not math.isfinite(x2):
            raise InstabilityError(f"state diverged at sample {i}", sample=i)
        if i == n - 1:
            break
        base = 2 * m * i
        for j in range(m):
            q = base + 2 * j
            k0, kh, k1 = k_fine[q], k_fine[q + 1], k_fine[q + 2]
            f0, fh, f1 = ufb + uff_fine[q], ufb + uff_fine[q + 1], ufb + uff_fine[q + 2]

            a1_, a2_ = accel(x1, v1, x2, v2, k0, f0)
            dx1a, dv1a, dx2a, dv2a = v1, a1_, v2, a2_
            a1_, a2_ = accel(x1 + 0.5 * h * dx1a, v1 + 0.5 * h * dv1a,
                             x2 + 0.5 * h * dx2a, v2 + 0.5 * h * dv2a, kh, fh)
            dx1b, dv1b, dx2b, dv2b = v1 + 0.5 * h * dv1a, a1_, v2 + 0.5 * h * dv2a, a2_
            a1_, a2_ = accel(x1 + 0.5 * h * dx1b, v1 + 0.5 * h * dv1b,
                             x2 + 0.5 * h * dx2b, v2 + 0.5 * h * dv2b, kh, fh)
            dx1c, dv1c, dx2c, dv2c = v1 + 0.5 * h * dv1b, a1_, v2 + 0.5 * h * dv2b, a2_
            a1_, a2_ = accel(x1 + h * dx1c, v1 + h * dv1c,
                             x2 + h * dx2c, v2 + h * dv2c, k1, f1)
            dx1d, dv1d, dx2d, dv2d = v1 + h * dv1c, a1_, v2 + h * dv2c, a2_

            x1 += h / 6 * (dx1a + 2 * dx1b + 2 * dx1c + dx1d)
            v1 += h / 6 * (dv1a + 2 * dv1b + 2 * dv1c + dv1d)
            x2 += h / 6 * (dx2a + 2 * dx2b + 2 * dx2c + dx2d)
            v2 += h / 6 * (dv2a + 2 * dv2b + 2 * dv2c + dv2d)

    y_sig = SampledSignal(y, ts)
    u_fb_sig = SampledSignal(u_fb, ts)
    return SimulationRecord(
        r=bundle.r,
        y=y_sig,
        u=u_fb_sig + u_ff,
        e=bundle.r - y_sig,
        u_fb=u_fb_sig,
        u_ff=u_ff,
    )


def foh_double_integral(u):
    """Exact double integral (zero initial conditions) of the piecewise-linear interpolant of ``u``."""
    ts = u.sample_period
    v = integrate(u, 0.0).values
    uu = u.values
    w = np.zeros_like(uu)
    incr = ts * v[:-1] + ts**2 * (2 * uu[:-1] + uu[1:]) / 6
    w[1:] = np.cumsum(incr)
    return u.with_values(w)


def io_residual(params, rho_bar, u, y):
    """Relative RMS mismatch of the frozen-rho input-output relation of the plant.

    Left side: m1*m2*y'' + (c*(m1+m2) + c2*m1)*y' + (k*(m1+m2) + c*c2)*y + k*c2*int(y).
    Right side: c*w' + k*w with w the double integral of u.

    Both signals must start from rest at zero. ``w`` integrates the linear
    interpolant of ``u`` exactly; derivatives use second-order differences.
    Returns ``rms(lhs - rhs) / max(rms(lhs), rms(rhs))``, or 0 when both
    sides vanish.
    """
    k = stiffness(params, rho_bar)
    m1, m2, c, c2 = params.m1, params.m2, params.c, params.c2
    if len(u) != len(y) or u.sample_period != y.sample_period:
        raise InvalidInputError("u and y must share length and sample period")
    w = foh_double_integral(u)
    lhs = (
        m1 * m2 * differentiate(differentiate(y))
        + (c * (m1 + m2) + c2 * m1) * differentiate(y)
        + (k * (m1 + m2) + c * c2) * y
        + k * c2 * integrate(y, 0.0)
    )
    rhs = c * differentiate(w) + k * w
    scale = max(rms(lhs), rms(rhs))
    if scale == 0:
        return 0.0
    return rms(lhs - rhs) / scale
