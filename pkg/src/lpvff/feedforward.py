"""Basis-function feedforward laws: LTI, static LPV and dynamic LPV.

The LPV feedforward is built on the doubly integrated input,
``w_ff = sum_i theta_i(rho) * (psi_i r)``, and the applied force is its
second time derivative. Expanding that derivative with the chain and product
rules gives the static part ``sum_i theta_i(rho) * d2/dt2 (psi_i r)`` plus the
scheduling-rate terms collected in ``u_dyn``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .plant import stiffness, stiffness_d1, stiffness_d2
from .signals import SampledSignal, differentiate, integrate, write_csv

__all__ = [
    "BasisSet",
    "ThetaFunctions",
    "FeedforwardSignals",
    "true_theta",
    "ff_lti",
    "ff_static_lpv",
    "ff_dynamic_lpv",
    "apply_basis",
]

_NAMES = {-1: "integral", 0: "identity"}


def _order_from_name(name):
    name = name.strip().lower()
    for order, label in _NAMES.items():
        if name == label:
            return order
    if name.startswith("d") and name[1:].isdigit() and int(name[1:]) >= 1:
        return int(name[1:])
    raise InvalidInputError(f"unknown basis operator {name!r}")


@dataclass(frozen=True)
class BasisSet:
    """Ordered basis operators, each a derivative order: -1 integral, 0 identity, n >= 1."""

    orders: tuple

    def __post_init__(self):
        orders = tuple(int(o) for o in self.orders)
        if not orders:
            raise InvalidInputError("basis set is empty")
        if len(set(orders)) != len(orders):
            raise InvalidInputError(f"basis operators must be distinct, got {orders}")
        if min(orders) < -1:
            raise InvalidInputError("only a single integral is supported")
        object.__setattr__(self, "orders", orders)

    def __len__(self):
        return len(self.orders)

    def __iter__(self):
        return iter(self.orders)

    @classmethod
    def benchmark(cls):
        """Integral, identity and second derivative (velocity/acceleration/snap feedforward)."""
        return cls((-1, 0, 2))

    @classmethod
    def parse(cls, descriptor):
        """From a comma separated list such as ``"integral, identity, d2"``."""
        return cls(tuple(_order_from_name(p) for p in descriptor.split(",") if p.strip()))

    def names(self):
        return [_NAMES.get(o, f"d{o}") for o in self.orders]

    def descriptor(self):
        return ", ".join(self.names())


def apply_basis(order, s):
    """Apply a single basis operator to a measured signal."""
    if order == -1:
        return integrate(s, 0.0)
    out = s
    for _ in range(order):
        out = differentiate(out)
    return out


class ThetaFunctions:
    """Scheduling-dependent feedforward parameters with two rho-derivatives.

    Each entry of ``funcs`` maps an array of rho values to the tuple
    ``(theta, dtheta/drho, d2theta/drho2)``.
    """

    def __init__(self, funcs, names=None):
        self.funcs = list(funcs)
        if not self.funcs:
            raise InvalidInputError("need at least one parameter function")
        self.names = list(names) if names is not None else [f"theta{i + 1}" for i in range(len(self.funcs))]

    def __len__(self):
        return len(self.funcs)

    def evaluate(self, rho):
        """Arrays of shape (n_theta, len(rho)) for values and both derivatives."""
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        vals, d1, d2 = [], [], []
        for f in self.funcs:
            v, dv, ddv = f(rho)
            vals.append(np.broadcast_to(v, rho.shape))
            d1.append(np.broadcast_to(dv, rho.shape))
            d2.append(np.broadcast_to(ddv, rho.shape))
        return np.array(vals, dtype=float), np.array(d1, dtype=float), np.array(d2, dtype=float)

    def at(self, rho):
        """Parameter values at a single scheduling point."""
        return self.evaluate([rho])[0][:, 0]

    @classmethod
    def constant(cls, values, names=None):
        def make(c):
            c = float(c)
            return lambda rho: (np.full(rho.shape, c), np.zeros(rho.shape), np.zeros(rho.shape))

        return cls([make(c) for c in values], names)

    def scaled(self, alpha):
        def make(f):
            def g(rho):
                v, d1, d2 = f(rho)
                return alpha * np.asarray(v), alpha * np.asarray(d1), alpha * np.asarray(d2)

            return g

        return ThetaFunctions([make(f) for f in self.funcs], self.names)


def _inverse_stiffness(params, scale):
    """theta(rho) = scale / k(rho) with analytic rho-derivatives."""

    def f(rho):
        k = stiffness(params, rho)
        dk = stiffness_d1(params, rho)
        ddk = stiffness_d2(params, rho)
        return scale / k, -scale * dk / k**2, scale * (2 * dk**2 - k * ddk) / k**3

    return f


def true_theta(params, basis=None):
    """Parameters of the exact polynomial inverse of the two-mass plant.

    Supported bases are the benchmark set (integral, identity, d2) and the
    full set (integral, identity, d1, d2) that also carries the damping
    related jerk term.
    """
    basis = basis or BasisSet.benchmark()
    m1, m2, c, c2 = params.m1, params.m2, params.c, params.c2
    table = {
        -1: lambda rho: (np.full(rho.shape, c2), np.zeros(rho.shape), np.zeros(rho.shape)),
        1: _inverse_stiffness(params, c * (m1 + m2) + c2 * m1),
        2: _inverse_stiffness(params, m1 * m2),
    }
    compliance = _inverse_stiffness(params, c * c2)

    def mass(rho):
        v, d1, d2 = compliance(rho)
        return m1 + m2 + v, d1, d2

    table[0] = mass
    missing = [o for o in basis if o not in table]
    if missing:
        raise InvalidInputError(f"no physical parameter for basis orders {missing}")
    return ThetaFunctions([table[o] for o in basis], basis.names())


@dataclass(frozen=True, eq=False)
class FeedforwardSignals:
    w_ff: SampledSignal
    u_ff: SampledSignal
    u_dyn: SampledSignal

    def to_csv(self, path):
        write_csv(path, self.u_ff.sample_period, {"w_ff": self.w_ff, "u_ff": self.u_ff, "u_dyn": self.u_dyn})


def _reference_terms(bundle, order):
    """(psi r, d/dt psi r, d2/dt2 psi r) from the analytic reference."""
    try:
        return tuple(bundle.derivative(order + j).values for j in range(3))
    except InvalidInputError as exc:
        raise InvalidInputError(
            f"basis order {order} needs reference derivatives up to {order + 2}"
        ) from exc


def _check_theta(theta, basis):
    if len(theta) != len(basis):
        raise InvalidInputError(f"{len(theta)} parameters for {len(basis)} basis functions")


def _assemble(bundle, basis, values, d1=None, d2=None, drho=None, ddrho=None):
    n = len(bundle)
    w = np.zeros(n)
    u = np.zeros(n)
    u_dyn = np.zeros(n)
    for i, order in enumerate(basis):
        p0, p1, p2 = _reference_terms(bundle, order)
        w += values[i] * p0
        u += values[i] * p2
        if d1 is not None:
            u_dyn += (ddrho * d1[i] + drho**2 * d2[i]) * p0 + 2 * drho * d1[i] * p1
    ts = bundle.sample_period
    u_total = u + u_dyn if d1 is not None else u
    return FeedforwardSignals(
        SampledSignal(w, ts), SampledSignal(u_total, ts), SampledSignal(u_dyn, ts)
    )


def ff_lti(bundle, theta_bar, basis=None):
    """Fixed-parameter feedforward ``u_ff = sum_i theta_i * d2/dt2 (psi_i r)``."""
    basis = basis or BasisSet.benchmark()
    theta_bar = np.asarray(theta_bar, dtype=float).reshape(-1)
    if theta_bar.size != len(basis):
        raise InvalidInputError(f"{theta_bar.size} parameters for {len(basis)} basis functions")
    values = np.repeat(theta_bar[:, None], len(bundle), axis=1)
    return _assemble(bundle, basis, values)


def ff_static_lpv(bundle, sched, theta, basis=None):
    """Scheduled parameters without the chain/product-rule terms."""
    basis = basis or BasisSet.benchmark()
    _check_theta(theta, basis)
    values, _, _ = theta.evaluate(sched.rho.values)
    return _assemble(bundle, basis, values)


def ff_dynamic_lpv(bundle, sched, theta, basis=None):
    """Second time derivative of ``w_ff``, including the scheduling-rate terms.

    For the benchmark basis with rho-independent first two parameters,
    ``u_dyn = rho'' theta3' r'' + rho'^2 theta3'' r'' + 2 rho' theta3' r'''``.
    """
    basis = basis or BasisSet.benchmark()
    _check_theta(theta, basis)
    values, d1, d2 = theta.evaluate(sched.rho.values)
    if not (np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))):
        raise InvalidInputError("parameter derivatives are not finite")
    return _assemble(bundle, basis, values, d1, d2, sched.drho.values, sched.ddrho.values)
