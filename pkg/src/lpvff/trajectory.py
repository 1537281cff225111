"""Fourth-order (snap-limited) point-to-point references.

The profile is the usual symmetric construction with up to fifteen
constant-snap phases: four snap pulses per acceleration or deceleration
stage, separated by constant-jerk, constant-acceleration and
constant-velocity segments. Every derivative is evaluated from the
piecewise polynomial, never by differencing.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidInputError, PlanningError, SchedulingError
from .signals import SampledSignal, integrate, write_csv

__all__ = [
    "MotionBounds",
    "PhaseDurations",
    "ReferenceBundle",
    "SchedulingSequence",
    "plan_fourth_order",
    "scheduling_from_reference",
]

DEFAULT_MAX_SAMPLES = 1_000_000


@dataclass(frozen=True)
class MotionBounds:
    v_max: float
    a_max: float
    j_max: float
    s_max: float

    def __post_init__(self):
        for name in ("v_max", "a_max", "j_max", "s_max"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidInputError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class PhaseDurations:
    """Durations of the snap pulse, constant jerk, acceleration and velocity."""

    snap: float
    jerk: float
    acc: float
    vel: float

    @property
    def total(self):
        return 8 * self.snap + 4 * self.jerk + 2 * self.acc + self.vel

    def displacement_per_snap(self):
        ts, tj, ta, tv = self.snap, self.jerk, self.acc, self.vel
        return ts * (ts + tj) * (2 * ts + tj + ta) * (4 * ts + 2 * tj + ta + tv)


@dataclass(frozen=True, eq=False)
class ReferenceBundle:
    """Reference position with derivatives through snap and its running integral."""

    r: SampledSignal
    dr: SampledSignal
    ddr: SampledSignal
    dddr: SampledSignal
    ddddr: SampledSignal
    int_r: SampledSignal
    durations: PhaseDurations = None
    snap: float = 0.0

    def __post_init__(self):
        n, ts = len(self.r), self.r.sample_period
        for name in ("dr", "ddr", "dddr", "ddddr", "int_r"):
            sig = getattr(self, name)
            if len(sig) != n or sig.sample_period != ts:
                raise InvalidInputError(f"{name} does not share the grid of r")

    @property
    def sample_period(self):
        return self.r.sample_period

    def __len__(self):
        return len(self.r)

    @classmethod
    def from_arrays(cls, r, dr, ddr, dddr, ddddr, sample_period, **kwargs):
        """Bundle from raw derivative arrays; ``int_r`` by trapezoidal rule."""
        sig = lambda v: SampledSignal(v, sample_period)  # noqa: E731
        r_sig = sig(r)
        return cls(
            r=r_sig,
            dr=sig(dr),
            ddr=sig(ddr),
            dddr=sig(dddr),
            ddddr=sig(ddddr),
            int_r=integrate(r_sig, 0.0),
            **kwargs,
        )

    @classmethod
    def constant(cls, position, n, sample_period):
        z = np.zeros(n)
        return cls.from_arrays(np.full(n, float(position)), z, z, z, z, sample_period)

    def derivative(self, order):
        """Signal of the given derivative order (-1 gives the running integral)."""
        table = {-1: self.int_r, 0: self.r, 1: self.dr, 2: self.ddr, 3: self.dddr, 4: self.ddddr}
        if order not in table:
            raise InvalidInputError(f"reference carries orders -1..4, not {order}")
        return table[order]

    def to_csv(self, path):
        write_csv(
            path,
            self.sample_period,
            {
                "r": self.r,
                "dr": self.dr,
                "ddr": self.ddr,
                "dddr": self.dddr,
                "ddddr": self.ddddr,
                "int_r": self.int_r,
            },
        )


@dataclass(frozen=True, eq=False)
class SchedulingSequence:
    rho: SampledSignal
    drho: SampledSignal
    ddrho: SampledSignal

    def __len__(self):
        return len(self.rho)

    @classmethod
    def frozen(cls, value, n, sample_period):
        """Constant scheduling, all derivatives zero."""
        return cls(
            SampledSignal(np.full(n, float(value)), sample_period),
            SampledSignal.zeros(n, sample_period),
            SampledSignal.zeros(n, sample_period),
        )


def _solve_durations(distance, bounds):
    """Continuous-time phase durations for a move of ``distance`` > 0."""
    v, a, j, s = bounds.v_max, bounds.a_max, bounds.j_max, bounds.s_max

    ts = min(j / s, math.sqrt(a / s), (v / (2 * s)) ** (1 / 3), (distance / (8 * s)) ** 0.25)
    jerk = s * ts

    # constant-jerk segment, limited by a_max, v_max and the distance
    tj_a = a / jerk - ts
    tj_v = (-3 * ts + math.sqrt(ts * ts + 4 * v / jerk)) / 2
    dist_tj = lambda tj: 2 * jerk * (ts + tj) * (2 * ts + tj) ** 2 - distance  # noqa: E731
    if dist_tj(0.0) >= 0:
        tj_d = 0.0
    else:
        hi = 1.0
        while dist_tj(hi) < 0:
            hi *= 2
        tj_d = brentq(dist_tj, 0.0, hi, xtol=1e-15, rtol=1e-15)
    tj = max(0.0, min(tj_a, tj_v, tj_d))
    acc = jerk * (ts + tj)

    p = 2 * ts + tj
    ta_v = v / acc - p
    ta_d = (-3 * p + math.sqrt(p * p + 4 * distance / acc)) / 2
    ta = max(0.0, min(ta_v, ta_d))
    vel = acc * (p + ta)

    tv = max(0.0, distance / vel - (4 * ts + 2 * tj + ta))
    return PhaseDurations(ts, tj, ta, tv)


def _round_up(duration, sample_period):
    return math.ceil(duration / sample_period - 1e-9) * sample_period


def _phase_table(durations, snap):
    """(duration, snap) pairs of the non-empty phases, in order."""
    d = durations
    half = [
        (d.snap, snap),
        (d.jerk, 0.0),
        (d.snap, -snap),
        (d.acc, 0.0),
        (d.snap, -snap),
        (d.jerk, 0.0),
        (d.snap, snap),
    ]
    phases = half + [(d.vel, 0.0)] + [(dt, -sv) for dt, sv in half]
    return [(dt, sv) for dt, sv in phases if dt > 0]


def _evaluate(phases, t):
    """Position and derivatives (orders 0..4) of the profile at times ``t``.

    The move occupies ``[0, total]``; earlier samples sit at rest at zero
    and later ones at rest at the end position.
    """
    starts = [0.0]
    states = [np.zeros(4)]  # x, v, a, j at phase start
    for dt, sv in phases:
        x, v, a, j = states[-1]
        states.append(
            np.array(
                [
                    x + v * dt + a * dt**2 / 2 + j * dt**3 / 6 + sv * dt**4 / 24,
                    v + a * dt + j * dt**2 / 2 + sv * dt**3 / 6,
                    a + j * dt + sv * dt**2 / 2,
                    j + sv * dt,
                ]
            )
        )
        starts.append(starts[-1] + dt)
    starts = np.array(starts)
    total = starts[-1]

    out = np.zeros((5, t.size))
    out[0, t >= total] = states[-1][0]
    inside = (t >= 0) & (t < total)
    idx = np.searchsorted(starts, t[inside], side="right") - 1
    x, v, a, j = np.array(states)[idx].T
    sv = np.array([sv for _, sv in phases])[idx]
    tau = t[inside] - starts[idx]
    out[0, inside] = x + v * tau + a * tau**2 / 2 + j * tau**3 / 6 + sv * tau**4 / 24
    out[1, inside] = v + a * tau + j * tau**2 / 2 + sv * tau**3 / 6
    out[2, inside] = a + j * tau + sv * tau**2 / 2
    out[3, inside] = j + sv * tau
    out[4, inside] = sv
    return out, starts


def _average_snap_at_switches(snap, t, phases, starts, tol):
    """Replace sampled snap on switching instants by the mean of both one-sided limits.

    With this convention the trapezoidal integral of the sampled snap is
    exact away from the switch samples and its error does not accumulate.
    """
    levels = [0.0] + [sv for _, sv in phases] + [0.0]
    for b, tb in enumerate(starts):
        hit = np.abs(t - tb) <= tol
        snap[hit] = 0.5 * (levels[b] + levels[b + 1])


def plan_fourth_order(
    start,
    end,
    bounds,
    sample_period,
    align_to_samples=True,
    max_samples=DEFAULT_MAX_SAMPLES,
):
    """Plan a rest-to-rest snap-limited move from ``start`` to ``end``.

    The move begins one sample after the first sample and the bundle ends
    with at least one sample at rest on the end position.

    Parameters
    ----------
    start, end : float
        Initial and final position (m).
    bounds : MotionBounds
        Velocity, acceleration, jerk and snap limits.
    sample_period : float
        Sampling time of the returned signals (s).
    align_to_samples : bool
        Round every phase duration up to a whole number of samples and lower
        the snap level so the stroke is met exactly. All bounds remain
        satisfied and snap switches fall on sample instants. When False the
        bounds are used as given and switches fall between samples.
    max_samples : int
        Upper limit on the number of samples.

    Returns
    -------
    ReferenceBundle
    """
    distance = float(end) - float(start)
    if distance == 0 or not np.isfinite(distance):
        raise InvalidInputError("start and end positions must differ")
    if not (np.isfinite(sample_period) and sample_period > 0):
        raise InvalidInputError(f"sample_period must be positive, got {sample_period!r}")
    direction = math.copysign(1.0, distance)
    distance = abs(distance)

    durations = _solve_durations(distance, bounds)
    snap = bounds.s_max
    if align_to_samples:
        durations = PhaseDurations(
            *(
                _round_up(x, sample_period)
                for x in (durations.snap, durations.jerk, durations.acc, durations.vel)
            )
        )
        snap = distance / durations.displacement_per_snap()

    n = math.ceil(durations.total / sample_period - 1e-9) + 3
    if n > max_samples:
        raise PlanningError(f"move needs {n} samples, more than the allowed {max_samples}")
    t = (np.arange(n) - 1) * sample_period
    phases = _phase_table(durations, snap)
    out, starts = _evaluate(phases, t)
    _average_snap_at_switches(out[4], t, phases, starts, tol=1e-9 * sample_period)
    # polynomial evaluation can overshoot an active bound by a few ulps
    for row, limit in zip(out[1:], (bounds.v_max, bounds.a_max, bounds.j_max, bounds.s_max)):
        np.clip(row, -limit, limit, out=row)

    r = start + direction * out[0]
    return ReferenceBundle.from_arrays(
        r,
        direction * out[1],
        direction * out[2],
        direction * out[3],
        direction * out[4],
        sample_period,
        durations=durations,
        snap=snap,
    )


def scheduling_from_reference(bundle, length=1.0):
    """Scheduling sequence equal to the reference position.

    ``length`` is the beam length L; the reference must stay strictly
    inside (0, L).
    """
    r = bundle.r.values
    if np.any(r <= 0) or np.any(r >= length):
        bad = int(np.flatnonzero((r <= 0) | (r >= length))[0])
        raise SchedulingError(
            f"scheduling leaves (0, {length}) at sample {bad} (rho={r[bad]!r})"
        )
    return SchedulingSequence(bundle.r, bundle.dr, bundle.ddr)
