"""Kernels over the scheduling variable, Gram assembly and evidence maximization.

Each feedforward parameter gets a diagonal block in the prior covariance of
the stacked parameter trajectories. Three block kinds exist:

``constant``
    ``variance * ones``: the parameter takes one shared value.
``white``
    ``variance * I``: an independent value per training sample.
``se``
    squared exponential, ``variance * exp(-(rho - rho')**2 / (2 * lengthscale**2))``.

Off-diagonal blocks are zero unless listed in ``KernelSpec.cross``.
"""

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .errors import InvalidInputError, NumericalError

__all__ = [
    "BlockSpec",
    "KernelSpec",
    "GramMatrix",
    "SearchConfig",
    "OptimizationResult",
    "se_kernel",
    "block_kernel",
    "block_kernel_derivatives",
    "build_gram",
    "gram_product",
    "log_marginal_likelihood",
    "optimize_hyperparameters",
    "cholesky_with_jitter",
]

BLOCK_KINDS = ("constant", "white", "se")
JITTER = 1e-10


def se_kernel(rho, rho_p, sigma2, ell):
    """Squared-exponential kernel; broadcasts over array arguments."""
    if not (sigma2 > 0 and ell > 0):
        raise InvalidInputError(f"SE kernel needs sigma2 > 0 and ell > 0, got {sigma2}, {ell}")
    d = np.subtract(rho, rho_p)
    out = sigma2 * np.exp(-(d * d) / (2.0 * ell * ell))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class BlockSpec:
    kind: str = "constant"
    variance: float = 1.0
    lengthscale: float = None
    free_variance: bool = False
    free_lengthscale: bool = False

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise InvalidInputError(f"unknown kernel block kind {self.kind!r}")
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise InvalidInputError(f"block variance must be positive, got {self.variance!r}")
        if self.kind == "se":
            if self.lengthscale is None or not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
                raise InvalidInputError("SE block needs a positive lengthscale")
        elif self.free_lengthscale:
            raise InvalidInputError(f"{self.kind} block has no lengthscale to optimize")

    def free_names(self):
        names = []
        if self.free_variance:
            names.append("variance")
        if self.free_lengthscale:
            names.append("lengthscale")
        return names


@dataclass(frozen=True)
class KernelSpec:
    """Per-parameter blocks plus optional cross blocks keyed by (i, j), i < j."""

    blocks: tuple
    cross: dict = field(default_factory=dict)

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise InvalidInputError("kernel spec needs at least one block")
        object.__setattr__(self, "blocks", blocks)
        cross = {}
        for (i, j), blk in dict(self.cross).items():
            i, j = sorted((int(i), int(j)))
            if i == j or not (0 <= i < len(blocks) and 0 <= j < len(blocks)):
                raise InvalidInputError(f"invalid cross block index ({i}, {j})")
            cross[(i, j)] = blk
        object.__setattr__(self, "cross", cross)

    def __len__(self):
        return len(self.blocks)

    def free_parameters(self):
        """List of (block index, hyperparameter name) that may be optimized."""
        return [(i, name) for i, blk in enumerate(self.blocks) for name in blk.free_names()]

    def with_value(self, index, name, value):
        blocks = list(self.blocks)
        blocks[index] = replace(blocks[index], **{name: float(value)})
        return KernelSpec(tuple(blocks), self.cross)

    def to_dict(self):
        def blk(b):
            d = {"kind": b.kind, "variance": b.variance}
            if b.lengthscale is not None:
                d["lengthscale"] = b.lengthscale
            d["free_variance"] = b.free_variance
            d["free_lengthscale"] = b.free_lengthscale
            return d

        return {
            "blocks": [blk(b) for b in self.blocks],
            "cross": [{"i": i, "j": j, **blk(b)} for (i, j), b in sorted(self.cross.items())],
        }

    @classmethod
    def from_dict(cls, d):
        blocks = tuple(BlockSpec(**b) for b in d["blocks"])
        cross = {}
        for c in d.get("cross", []):
            c = dict(c)
            i, j = c.pop("i"), c.pop("j")
            cross[(i, j)] = BlockSpec(**c)
        return cls(blocks, cross)


def block_kernel(blk, rho, rho_p):
    """Kernel matrix of one block between point sets ``rho`` and ``rho_p``."""
    rho = np.asarray(rho, dtype=float).reshape(-1)
    rho_p = np.asarray(rho_p, dtype=float).reshape(-1)
    if blk.kind == "constant":
        return np.full((rho.size, rho_p.size), blk.variance)
    if blk.kind == "white":
        return blk.variance * (rho[:, None] == rho_p[None, :]).astype(float)
    return se_kernel(rho[:, None], rho_p[None, :], blk.variance, blk.lengthscale)


def block_kernel_derivatives(blk, rho, rho_p):
    """First and second derivatives of the block kernel in its first argument."""
    k = block_kernel(blk, rho, rho_p)
    if blk.kind != "se":
        return np.zeros_like(k), np.zeros_like(k)
    d = np.asarray(rho, dtype=float).reshape(-1)[:, None] - np.asarray(rho_p, dtype=float).reshape(-1)[None, :]
    inv_l2 = 1.0 / blk.lengthscale**2
    return -d * inv_l2 * k, (d * d * inv_l2 * inv_l2 - inv_l2) * k


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Block-structured Gram matrix; absent blocks are zero.

    ``blocks[(i, j)]`` holds the N x N block for i <= j; the lower blocks are
    their transposes.
    """

    blocks: dict
    n_theta: int
    n: int
    spec: KernelSpec = None
    rho_bar: np.ndarray = None

    def block(self, i, j):
        if (i, j) in self.blocks:
            return self.blocks[(i, j)]
        if (j, i) in self.blocks:
            return self.blocks[(j, i)].T
        return np.zeros((self.n, self.n))

    def dense(self):
        out = np.zeros((self.n_theta * self.n, self.n_theta * self.n))
        for i in range(self.n_theta):
            for j in range(self.n_theta):
                out[i * self.n:(i + 1) * self.n, j * self.n:(j + 1) * self.n] = self.block(i, j)
        return out

    def matvec(self, x):
        """K @ x for a stacked vector of length n_theta * n."""
        x = np.asarray(x, dtype=float).reshape(self.n_theta, self.n)
        out = np.zeros_like(x)
        for (i, j), blk in self.blocks.items():
            out[i] += blk @ x[j]
            if i != j:
                out[j] += blk.T @ x[i]
        return out.reshape(-1)

    @classmethod
    def from_dense(cls, matrix, n_theta):
        matrix = np.asarray(matrix, dtype=float)
        n = matrix.shape[0] // n_theta
        if matrix.shape != (n_theta * n, n_theta * n):
            raise InvalidInputError("dense Gram matrix does not match n_theta")
        blocks = {}
        for i in range(n_theta):
            for j in range(i, n_theta):
                blk = matrix[i * n:(i + 1) * n, j * n:(j + 1) * n]
                if i == j or np.any(blk):
                    blocks[(i, j)] = blk.copy()
        return cls(blocks, n_theta, n)


def build_gram(spec, rho_bar):
    """Gram matrix of ``spec`` evaluated on all pairs of training scheduling samples."""
    rho_bar = np.asarray(getattr(rho_bar, "values", rho_bar), dtype=float).reshape(-1)
    if rho_bar.size < 1:
        raise InvalidInputError("need at least one scheduling sample")
    blocks = {(i, i): block_kernel(blk, rho_bar, rho_bar) for i, blk in enumerate(spec.blocks)}
    for (i, j), blk in spec.cross.items():
        blocks[(i, j)] = block_kernel(blk, rho_bar, rho_bar)
    return GramMatrix(blocks, len(spec), rho_bar.size, spec, rho_bar)


def _diagonals(Phi):
    return getattr(Phi, "diagonals", None)


def gram_product(K, Phi):
    """Phi @ K @ Phi.T, using the diagonal block structure of Phi when available."""
    diag = _diagonals(Phi)
    if diag is not None:
        S = np.zeros((K.n, K.n))
        for (i, j), blk in K.blocks.items():
            term = diag[i][:, None] * blk * diag[j][None, :]
            S += term if i == j else term + term.T
        return S
    Phi = np.asarray(Phi, dtype=float)
    return Phi @ K.dense() @ Phi.T


def cholesky_with_jitter(S, what="matrix"):
    """Lower Cholesky factor of S; retries once with ``1e-10 * trace/N`` on the diagonal."""
    S = np.asarray(S, dtype=float)
    try:
        return linalg.cho_factor(S, lower=True, check_finite=True), 0.0
    except linalg.LinAlgError:
        pass
    jitter = JITTER * np.trace(S) / S.shape[0]
    try:
        return linalg.cho_factor(S + jitter * np.eye(S.shape[0]), lower=True), jitter
    except linalg.LinAlgError as exc:
        pivots = np.linalg.eigvalsh(0.5 * (S + S.T))
        raise NumericalError(
            f"{what} is not positive definite (smallest eigenvalue {pivots[0]:.3e}, "
            f"condition estimate {abs(pivots[-1] / pivots[0]) if pivots[0] else math.inf:.3e})"
        ) from exc


def _log_ml_from_S(S, w_bar):
    n = w_bar.size
    (c, lower), _ = cholesky_with_jitter(S, "evidence covariance")
    alpha = linalg.cho_solve((c, lower), w_bar)
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    return float(-0.5 * w_bar @ alpha - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi))


def log_marginal_likelihood(spec, Phi, w_bar, gamma, rho_bar):
    """Gaussian log evidence of ``w_bar`` with covariance ``Phi K Phi^T + gamma I``."""
    if not gamma > 0:
        raise InvalidInputError("gamma must be positive for the evidence")
    w_bar = np.asarray(w_bar, dtype=float).reshape(-1)
    K = build_gram(spec, rho_bar)
    S = gram_product(K, Phi)
    if S.shape[0] != w_bar.size:
        raise InvalidInputError("Phi and w_bar have inconsistent sizes")
    S[np.diag_indices_from(S)] += gamma
    return _log_ml_from_S(S, w_bar)


@dataclass(frozen=True)
class SearchConfig:
    """Log-space grid over every free hyperparameter, then coordinate refinement.

    ``gamma_range`` adds the regularization weight to the search set; when
    None it stays fixed. ``stride`` evaluates the evidence on every
    ``stride``-th sample only, which cuts the cost of each evaluation by
    roughly ``stride**3``.
    """

    grid_points: int = 25
    variance_range: tuple = (1e-12, 1e2)
    lengthscale_range: tuple = (1e-3, 1e1)
    refine_steps: int = 20
    gamma_range: tuple = None
    stride: int = 1

    def __post_init__(self):
        if self.grid_points < 1:
            raise InvalidInputError("grid_points must be at least 1")
        if self.refine_steps < 0:
            raise InvalidInputError("refine_steps must be non-negative")
        if int(self.stride) != self.stride or self.stride < 1:
            raise InvalidInputError("stride must be a positive integer")
        ranges = [self.variance_range, self.lengthscale_range]
        if self.gamma_range is not None:
            ranges.append(self.gamma_range)
        for lo, hi in ranges:
            if not 0 < lo <= hi:
                raise InvalidInputError("search ranges must satisfy 0 < low <= high")

    def grid(self, name):
        lo, hi = {
            "variance": self.variance_range,
            "lengthscale": self.lengthscale_range,
            "gamma": self.gamma_range,
        }[name]
        return np.geomspace(lo, hi, self.grid_points)


@dataclass(frozen=True)
class OptimizationResult:
    spec: KernelSpec
    gamma: float
    log_ml: float
    evaluations: int


def _subsample(Phi, w_bar, rho_bar, stride):
    if stride == 1:
        return Phi, w_bar, rho_bar
    diag = _diagonals(Phi)
    if diag is not None:
        Phi = type(Phi)(diag[:, ::stride])
    else:
        Phi = np.asarray(Phi, dtype=float)
        n = rho_bar.size
        n_theta = Phi.shape[1] // n
        cols = np.concatenate([np.arange(i * n, (i + 1) * n)[::stride] for i in range(n_theta)])
        Phi = Phi[::stride][:, cols]
    return Phi, w_bar[::stride], rho_bar[::stride]


class _Evidence:
    """Evidence evaluator that reuses the Gram terms of fixed blocks.

    With a free gamma the eigendecomposition of ``Phi K Phi^T`` is cached per
    kernel spec, so changing gamma alone costs O(N).
    """

    def __init__(self, spec, Phi, w_bar, rho_bar):
        self.Phi = Phi
        self.w_bar = np.asarray(w_bar, dtype=float).reshape(-1)
        self.rho_bar = np.asarray(getattr(rho_bar, "values", rho_bar), dtype=float).reshape(-1)
        self.free_blocks = sorted({i for i, _ in spec.free_parameters()})
        fixed = KernelSpec(
            tuple(b if i not in self.free_blocks else BlockSpec("constant", 1.0) for i, b in enumerate(spec.blocks)),
            spec.cross,
        )
        K = build_gram(fixed, self.rho_bar)
        for i in self.free_blocks:
            K.blocks.pop((i, i))
        self.S_fixed = gram_product(K, Phi)
        self._unit = {}
        self._eig = {}
        self.count = 0

    def _unit_term(self, i, blk):
        key = (i, blk.kind, blk.lengthscale)
        if key not in self._unit:
            unit = block_kernel(replace(blk, variance=1.0), self.rho_bar, self.rho_bar)
            diag = _diagonals(self.Phi)
            if diag is not None:
                term = diag[i][:, None] * unit * diag[i][None, :]
            else:
                n = self.rho_bar.size
                cols = np.asarray(self.Phi, dtype=float)[:, i * n:(i + 1) * n]
                term = cols @ unit @ cols.T
            if len(self._unit) > 64:
                self._unit.clear()
            self._unit[key] = term
        return self._unit[key]

    def gram(self, spec):
        S = self.S_fixed.copy()
        for i in self.free_blocks:
            blk = spec.blocks[i]
            S += blk.variance * self._unit_term(i, blk)
        return S

    def __call__(self, spec, gamma, cache_eig=False):
        self.count += 1
        if not cache_eig:
            S = self.gram(spec)
            S[np.diag_indices_from(S)] += gamma
            try:
                return _log_ml_from_S(S, self.w_bar)
            except NumericalError:
                return -math.inf
        key = tuple((b.variance, b.lengthscale) for b in spec.blocks)
        if key not in self._eig:
            lam, Q = np.linalg.eigh(self.gram(spec))
            self._eig.clear()
            self._eig[key] = (lam, (Q.T @ self.w_bar) ** 2)
        lam, proj = self._eig[key]
        d = lam + gamma
        if np.any(d <= 0):
            return -math.inf
        n = self.w_bar.size
        return float(-0.5 * np.sum(proj / d) - 0.5 * np.sum(np.log(d)) - 0.5 * n * math.log(2 * math.pi))


def optimize_hyperparameters(spec_template, Phi, w_bar, gamma, rho_bar, search=None):
    """Maximize the log evidence over the free hyperparameters of ``spec_template``.

    A full log-spaced grid is scanned first (ties resolved towards the lowest
    grid index), then each free coordinate is refined in turn by a pattern
    step in log space that halves whenever no neighbour improves.

    Returns
    -------
    OptimizationResult
        The best spec, the gamma used with it (the input ``gamma`` unless it
        is part of the search) and the achieved log evidence.
    """
    search = search or SearchConfig()
    free = spec_template.free_parameters()
    free_gamma = search.gamma_range is not None
    if not free and not free_gamma:
        raise InvalidInputError("search space is empty: no free hyperparameters")
    if not free_gamma and not gamma > 0:
        raise InvalidInputError("gamma must be positive for the evidence")
    rho = np.asarray(getattr(rho_bar, "values", rho_bar), dtype=float).reshape(-1)
    Phi_s, w_s, rho_s = _subsample(Phi, np.asarray(w_bar, dtype=float).reshape(-1), rho, int(search.stride))
    evidence = _Evidence(spec_template, Phi_s, w_s, rho_s)

    coords = [name for _, name in free] + (["gamma"] if free_gamma else [])
    grids = [search.grid(name) for name in coords]

    def evaluate(values):
        spec = spec_template
        for (i, name), v in zip(free, values):
            spec = spec.with_value(i, name, v)
        g = values[-1] if free_gamma else gamma
        return evidence(spec, g, cache_eig=free_gamma)

    # gamma varies fastest, so the cached eigendecomposition is reused along it
    best_val, best_x = -math.inf, None
    for point in itertools.product(*grids):
        val = evaluate(point)
        if val > best_val:
            best_val, best_x = val, np.array(point, dtype=float)
    if best_x is None:
        raise NumericalError("evidence is not finite anywhere on the search grid")

    log_x = np.log(best_x)
    steps = np.array([np.log(g[1] / g[0]) / 2 if g.size > 1 else 0.0 for g in grids])
    for _ in range(search.refine_steps if search.grid_points > 1 else 0):
        improved = False
        for c in range(len(coords)):
            for sign in (1.0, -1.0):
                trial = log_x.copy()
                trial[c] += sign * steps[c]
                val = evaluate(np.exp(trial))
                if val > best_val:
                    best_val, log_x, improved = val, trial, True
                    break
        if not improved:
            steps = steps / 2

    x = np.exp(log_x)
    spec = spec_template
    for (i, name), v in zip(free, x):
        spec = spec.with_value(i, name, v)
    return OptimizationResult(spec, float(x[-1]) if free_gamma else float(gamma), best_val, evidence.count)
