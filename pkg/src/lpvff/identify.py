"""Kernel-regularized identification of scheduling-dependent feedforward parameters.

The regression maps the measured output ``y`` to ``w = double integral of u``
through ``w(k) = sum_i theta_i(rho(k)) * (psi_i y)(k)``. Stacking the
parameter trajectories gives ``w_bar = Phi @ Theta`` with ``Phi`` made of
diagonal blocks, and the regularized estimate is computed in the dual:
``alpha = (Phi K Phi^T + gamma I)^-1 w_bar`` and ``Theta = K Phi^T alpha``.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InvalidInputError, NumericalError, SchedulingError
from .feedforward import BasisSet, ThetaFunctions, apply_basis
from .kernel import (
    GramMatrix,
    KernelSpec,
    block_kernel,
    block_kernel_derivatives,
    build_gram,
    cholesky_with_jitter,
    gram_product,
)
from .signals import SampledSignal, double_integrate

__all__ = [
    "RegressorMatrix",
    "IdentifiedModel",
    "PredictedTheta",
    "build_regressors",
    "build_target",
    "default_gamma",
    "solve",
    "predict_theta",
    "identified_theta_functions",
    "objective",
]

GAMMA_SCALE = 1e-8


@dataclass(frozen=True, eq=False)
class RegressorMatrix:
    """Block-diagonal regressor ``Phi = [diag(phi_1) ... diag(phi_n)]``.

    Only the diagonals are stored; ``dense()`` builds the N x n_theta*N matrix.
    """

    diagonals: np.ndarray
    basis: BasisSet = None

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.diagonals, dtype=float))
        object.__setattr__(self, "diagonals", d)

    @property
    def n(self):
        return self.diagonals.shape[1]

    @property
    def n_theta(self):
        return self.diagonals.shape[0]

    @property
    def shape(self):
        return (self.n, self.n_theta * self.n)

    def dense(self):
        return np.hstack([np.diag(d) for d in self.diagonals])

    def matvec(self, theta):
        """Phi @ theta for stacked theta of length n_theta * N."""
        return np.sum(self.diagonals * np.asarray(theta, dtype=float).reshape(self.n_theta, self.n), axis=0)

    def rmatvec(self, v):
        """Phi^T @ v, stacked."""
        return (self.diagonals * np.asarray(v, dtype=float)[None, :]).reshape(-1)


def build_regressors(y, basis):
    """Apply every basis operator to the measured output."""
    if basis is None or len(basis) == 0:
        raise InvalidInputError("basis is empty")
    if len(y) < 3:
        raise InvalidInputError(f"need at least 3 output samples, got {len(y)}")
    return RegressorMatrix(np.array([apply_basis(o, y).values for o in basis]), basis)


def build_target(u):
    """Samples of the doubly integrated input."""
    if len(u) < 2:
        raise InvalidInputError(f"need at least 2 input samples, got {len(u)}")
    return double_integrate(u).values.copy()


def default_gamma(Phi, K, scale=GAMMA_SCALE):
    """``scale * trace(Phi K Phi^T) / N`` with ``scale = 1e-8`` by default."""
    diag = getattr(Phi, "diagonals", None)
    if diag is not None:
        tr = sum(float(np.sum(diag[i] ** 2 * np.diag(K.block(i, i)))) for i in range(K.n_theta))
    else:
        tr = float(np.trace(gram_product(K, Phi)))
    n = Phi.n if diag is not None else np.asarray(Phi).shape[0]
    return scale * tr / n


@dataclass(frozen=True, eq=False)
class IdentifiedModel:
    """Result of the regularized regression.

    ``coefficients`` holds ``Phi^T alpha`` reshaped to (n_theta, N); it is
    all that prediction needs besides the kernel.
    """

    theta_hat: np.ndarray
    rho_train: SampledSignal
    spec: KernelSpec
    gamma: float
    dual: np.ndarray
    coefficients: np.ndarray
    basis: BasisSet = None
    length: float = 1.0
    provenance: str = ""

    @property
    def n_theta(self):
        return self.coefficients.shape[0]

    def theta_blocks(self):
        """Estimated parameter trajectories, shape (n_theta, N)."""
        return self.theta_hat.reshape(self.n_theta, -1)

    def to_dict(self):
        return {
            "basis": self.basis.descriptor() if self.basis is not None else None,
            "kernel": self.spec.to_dict(),
            "gamma": self.gamma,
            "sample_period": self.rho_train.sample_period,
            "length": self.length,
            "rho_train": self.rho_train.values.tolist(),
            "dual": self.dual.tolist(),
            "coefficients": self.coefficients.tolist(),
            "provenance": self.provenance,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d):
        spec = KernelSpec.from_dict(d["kernel"])
        rho = SampledSignal(np.array(d["rho_train"], dtype=float), d["sample_period"])
        coeffs = np.array(d["coefficients"], dtype=float)
        K = build_gram(spec, rho)
        theta_hat = K.matvec(coeffs.reshape(-1))
        return cls(
            theta_hat=theta_hat,
            rho_train=rho,
            spec=spec,
            gamma=float(d["gamma"]),
            dual=np.array(d["dual"], dtype=float),
            coefficients=coeffs,
            basis=BasisSet.parse(d["basis"]) if d.get("basis") else None,
            length=float(d.get("length", 1.0)),
            provenance=d.get("provenance", ""),
        )

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def solve(Phi, K, gamma, w_bar, length=1.0, provenance=""):
    """Regularized least squares in closed form, computed in the dual.

    Parameters
    ----------
    Phi : RegressorMatrix or ndarray
        Regressor, N x n_theta*N.
    K : GramMatrix
        Prior covariance of the stacked parameters.
    gamma : float
        Regularization weight. Zero is accepted only if ``Phi K Phi^T`` is
        itself positive definite.
    w_bar : array
        Target samples, length N.

    Returns
    -------
    IdentifiedModel
    """
    w_bar = np.asarray(w_bar, dtype=float).reshape(-1)
    if not (np.isfinite(gamma) and gamma >= 0):
        raise InvalidInputError(f"gamma must be non-negative, got {gamma!r}")
    diag = getattr(Phi, "diagonals", None)
    dense_phi = None if diag is not None else np.asarray(Phi, dtype=float)
    n = w_bar.size
    n_rows = diag.shape[1] if diag is not None else dense_phi.shape[0]
    if n_rows != n or K.n_theta * K.n != (diag.size if diag is not None else dense_phi.shape[1]):
        raise InvalidInputError("Phi, K and w_bar have inconsistent dimensions")

    S = gram_product(K, Phi)
    S[np.diag_indices_from(S)] += gamma
    if gamma == 0:
        try:
            factor = linalg.cho_factor(S, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError("gamma = 0 but Phi K Phi^T is not positive definite") from exc
    else:
        factor, _ = cholesky_with_jitter(S, "regularized Gram system")
    alpha = linalg.cho_solve(factor, w_bar)
    if not np.all(np.isfinite(alpha)):
        raise NumericalError(f"dual solution is not finite (condition estimate {np.linalg.cond(S):.3e})")

    coeffs = (diag * alpha[None, :]) if diag is not None else (dense_phi.T @ alpha).reshape(K.n_theta, K.n)
    theta_hat = K.matvec(coeffs.reshape(-1))
    rho = K.rho_bar
    rho_sig = rho if isinstance(rho, SampledSignal) else SampledSignal(
        rho if rho is not None else np.zeros(K.n), 1.0
    )
    return IdentifiedModel(
        theta_hat=theta_hat,
        rho_train=rho_sig,
        spec=K.spec,
        gamma=float(gamma),
        dual=alpha,
        coefficients=coeffs,
        basis=getattr(Phi, "basis", None),
        length=length,
        provenance=provenance,
    )


def objective(Phi, K, gamma, w_bar, theta):
    """Regularized cost ``||w - Phi theta||^2 + gamma theta^T K^+ theta``.

    The norm uses the pseudo-inverse, so ``theta`` should lie in the range of K.
    """
    Phi_d = Phi.dense() if hasattr(Phi, "dense") else np.asarray(Phi, dtype=float)
    Kd = K.dense()
    resid = np.asarray(w_bar, dtype=float) - Phi_d @ theta
    return float(resid @ resid + gamma * theta @ np.linalg.pinv(Kd, hermitian=True) @ theta)


@dataclass(frozen=True)
class PredictedTheta:
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


def predict_theta(model, rho_star):
    """Representer-theorem prediction of every parameter at new scheduling points.

    Returns arrays of shape (n_theta, M) for the values and their first and
    second rho-derivatives (analytic; zero for constant blocks).
    """
    if model.spec is None or model.rho_train is None:
        raise InvalidInputError("model carries no kernel spec for prediction")
    rho_star = np.atleast_1d(np.asarray(rho_star, dtype=float))
    if np.any(~(rho_star > 0)) or np.any(~(rho_star < model.length)):
        raise SchedulingError(f"prediction points must lie in (0, {model.length})")
    rho_bar = model.rho_train.values
    coeffs = model.coefficients
    n_theta = coeffs.shape[0]
    vals = np.zeros((n_theta, rho_star.size))
    d1 = np.zeros_like(vals)
    d2 = np.zeros_like(vals)
    pairs = [((i, i), blk) for i, blk in enumerate(model.spec.blocks)]
    pairs += list(model.spec.cross.items())
    for (i, j), blk in pairs:
        targets = [(i, j)] if i == j else [(i, j), (j, i)]
        k = block_kernel(blk, rho_star, rho_bar)
        dk, ddk = block_kernel_derivatives(blk, rho_star, rho_bar)
        for a, b in targets:
            vals[a] += k @ coeffs[b]
            d1[a] += dk @ coeffs[b]
            d2[a] += ddk @ coeffs[b]
    return PredictedTheta(vals, d1, d2)


def identified_theta_functions(model, names=None):
    """Wrap a model as ThetaFunctions for the feedforward laws."""

    def make(i):
        def f(rho):
            p = predict_theta(model, rho)
            return p.values[i], p.d1[i], p.d2[i]

        return f

    if names is None and model.basis is not None:
        names = model.basis.names()
    return ThetaFunctions([make(i) for i in range(model.n_theta)], names)


def config_hash(text):
    return hashlib.sha256(text.encode()).hexdigest()
