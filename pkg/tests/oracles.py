"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np
from scipy import optimize

from lpvff.identify import RegressorMatrix
from lpvff.kernel import BlockSpec, KernelSpec, build_gram


def random_instance(rng, max_n=30, max_theta=3):
    """Random small regression problem: (Phi, K, gamma, w_bar)."""
    n = int(rng.integers(2, max_n + 1))
    n_theta = int(rng.integers(1, max_theta + 1))
    blocks = []
    for _ in range(n_theta):
        kind = rng.choice(["constant", "white", "se"])
        var = float(10 ** rng.uniform(-1, 1))
        ell = float(10 ** rng.uniform(-1.5, 0)) if kind == "se" else None
        blocks.append(BlockSpec(str(kind), var, ell))
    rho = rng.uniform(0.1, 0.9, n)
    K = build_gram(KernelSpec(tuple(blocks)), rho)
    Phi = RegressorMatrix(rng.standard_normal((n_theta, n)))
    gamma = float(10 ** rng.uniform(-2, 0))
    return Phi, K, gamma, rng.standard_normal(n)


def ridge(Phi, lam, gamma, w_bar):
    """Tikhonov solution (Phi^T Phi + gamma/lam I)^-1 Phi^T w for the prior K = lam I."""
    P = Phi.dense()
    return np.linalg.solve(P.T @ P + gamma / lam * np.eye(P.shape[1]), P.T @ w_bar)


def brute_force(Phi, K, gamma, w_bar):
    """Numerical minimizer of the regularized cost.

    Parameterizes theta = R c with K = R R^T (symmetric square root), which
    turns the penalty into gamma * ||c||^2 and keeps the search in the range
    of a possibly singular K. The cost is minimized by BFGS.
    """
    lam, Q = np.linalg.eigh(K.dense())
    R = Q * np.sqrt(np.clip(lam, 0.0, None))
    A = Phi.dense() @ R

    def cost(c):
        r = A @ c - w_bar
        return r @ r + gamma * c @ c, 2 * (A.T @ r) + 2 * gamma * c

    res = optimize.minimize(cost, np.zeros(R.shape[1]), jac=True, method="BFGS", options={"gtol": 1e-13, "maxiter": 10_000})
    return R @ res.x
