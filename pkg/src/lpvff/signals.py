"""Uniformly sampled signals and the discrete calculus used throughout lpvff.

Differentiation is second order everywhere (central differences inside,
one-sided three-point stencils at the ends) and integration is the cumulative
trapezoidal rule, so both carry O(T_s^2) error on smooth signals.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import InvalidInputError

__all__ = [
    "SampledSignal",
    "differentiate",
    "integrate",
    "double_integrate",
    "rms",
    "write_csv",
    "read_csv",
]


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Real-valued samples ``values[k] = s(k * sample_period)``."""

    values: np.ndarray
    sample_period: float

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True).reshape(-1)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        if not np.isfinite(self.sample_period) or self.sample_period <= 0:
            raise InvalidInputError(
                f"sample_period must be positive, got {self.sample_period!r}"
            )
        object.__setattr__(self, "sample_period", float(self.sample_period))

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    @property
    def t(self):
        """Sample instants in seconds, starting at zero."""
        return np.arange(len(self)) * self.sample_period

    @classmethod
    def zeros(cls, n, sample_period):
        return cls(np.zeros(n), sample_period)

    def with_values(self, values):
        """New signal on the same time grid."""
        return SampledSignal(values, self.sample_period)

    def _check_compatible(self, other):
        if not isinstance(other, SampledSignal):
            return
        if other.sample_period != self.sample_period:
            raise InvalidInputError(
                f"sample periods differ: {self.sample_period} vs {other.sample_period}"
            )
        if len(other) != len(self):
            raise InvalidInputError(f"lengths differ: {len(self)} vs {len(other)}")

    def _binary(self, other, op):
        self._check_compatible(other)
        rhs = other.values if isinstance(other, SampledSignal) else other
        return SampledSignal(op(self.values, rhs), self.sample_period)

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: np.subtract(b, a))

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return SampledSignal(-self.values, self.sample_period)

    def __eq__(self, other):
        if not isinstance(other, SampledSignal):
            return NotImplemented
        return (
            self.sample_period == other.sample_period
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def _require_length(s, n, what):
    if len(s) < n:
        raise InvalidInputError(f"{what} needs at least {n} samples, got {len(s)}")


def differentiate(s):
    """Second-order accurate time derivative on the sample grid."""
    _require_length(s, 3, "differentiate")
    return s.with_values(np.gradient(s.values, s.sample_period, edge_order=2))


def integrate(s, initial=0.0):
    """Cumulative trapezoidal integral with ``output[0] = initial``."""
    _require_length(s, 2, "integrate")
    out = cumulative_trapezoid(s.values, dx=s.sample_period, initial=0.0)
    return s.with_values(out + initial)


def double_integrate(s):
    """Twice-integrated signal with zero initial conditions.

    No detrending is applied; drift in the result is part of the data.
    """
    return integrate(integrate(s, 0.0), 0.0)


def rms(s):
    """Root-mean-square value of the samples."""
    _require_length(s, 1, "rms")
    peak = float(np.max(np.abs(s.values)))
    if peak == 0 or not np.isfinite(peak):
        return peak
    # scaling by the peak keeps tiny samples from underflowing when squared
    return peak * float(np.sqrt(np.mean(np.square(s.values / peak))))


def write_csv(path, sample_period, columns):
    """Write ``t`` plus named columns, one sample per row.

    ``columns`` maps header name to a SampledSignal or array. All columns
    must have the same length.
    """
    names = list(columns)
    data = [np.asarray(columns[name], dtype=float) for name in names]
    n = data[0].size if data else 0
    for name, col in zip(names, data):
        if col.size != n:
            raise InvalidInputError(f"column {name!r} has {col.size} rows, expected {n}")
    t = np.arange(n) * sample_period
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", *names])
        for k in range(n):
            writer.writerow([repr(float(t[k]))] + [repr(float(col[k])) for col in data])


def read_csv(path):
    """Read a file produced by :func:`write_csv`.

    Returns a dict of SampledSignal keyed by column name (``t`` excluded).
    The sample period is recovered from the time column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(x) for x in row] for row in reader], dtype=float)
    if header[0] != "t":
        raise InvalidInputError(f"{path}: first column must be 't', got {header[0]!r}")
    if rows.shape[0] < 2:
        raise InvalidInputError(f"{path}: need at least two samples to infer the period")
    period = float(rows[1, 0] - rows[0, 0])
    expected = rows[0, 0] + np.arange(rows.shape[0]) * period
    if not np.allclose(rows[:, 0], expected, rtol=1e-9, atol=1e-12):
        raise InvalidInputError(f"{path}: non-uniform sampling")
    return {
        name: SampledSignal(rows[:, j + 1], period) for j, name in enumerate(header[1:])
    }
