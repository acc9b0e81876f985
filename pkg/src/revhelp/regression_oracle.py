"""Independent reference solvers for the regularized squared-error regression.

Nothing here calls into numpy.linalg, so a defect in the main solver's
linear algebra cannot hide behind a shared helper.
"""

from __future__ import annotations

import numpy as np


class OracleError(ArithmeticError):
    pass


def _eliminate(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n = b.size
    scale = np.abs(A).max() if A.size else 1.0
    for col in range(n):
        piv = col + int(np.argmax(np.abs(A[col:, col])))
        if abs(A[piv, col]) <= 1e-13 * scale:
            raise OracleError(f"singular system (pivot {A[piv, col]!r} in column {col})")
        if piv != col:
            A[[col, piv]] = A[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        for r in range(col + 1, n):
            f = A[r, col] / A[col, col]
            if f != 0.0:
                A[r, col:] -= f * A[col, col:]
                b[r] -= f * b[col]
    x = np.zeros(n)
    for r in range(n - 1, -1, -1):
        x[r] = (b[r] - A[r, r + 1 :] @ x[r + 1 :]) / A[r, r]
    return x


def solve_normal_equations(X, y, lam: float, intercept_col: int | None = None) -> np.ndarray:
    """Solve (X^T X + lam * I') w = X^T y by partial-pivot elimination; I' skips ``intercept_col``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    G = X.T @ X
    pen = np.full(G.shape[0], float(lam))
    if intercept_col is not None:
        pen[intercept_col] = 0.0
    return _eliminate(G + np.diag(pen), X.T @ y)


def solve_ridge(X, y, mu: float) -> np.ndarray:
    """Oracle counterpart of the main fit: returns ``[bias, weights...]`` with penalty mu * N."""
    X = np.asarray(X, dtype=float)
    A = np.hstack([np.ones((X.shape[0], 1)), X])
    return solve_normal_equations(A, y, mu * X.shape[0], intercept_col=0)


def ridge_objective(psi, X, y, mu: float) -> float:
    X = np.asarray(X, dtype=float)
    r = np.asarray(y, dtype=float) - psi[0] - X @ psi[1:]
    return float(np.mean(r * r) + mu * np.sum(psi[1:] ** 2))


def ridge_gradient(psi, X, y, mu: float) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    r = np.asarray(y, dtype=float) - psi[0] - X @ psi[1:]
    n = X.shape[0]
    return np.concatenate([[-2.0 * r.sum() / n], -2.0 * (X.T @ r) / n + 2.0 * mu * psi[1:]])


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.empty_like(x, dtype=float)
    for i in range(x.size):
        e = np.zeros_like(x, dtype=float)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def gd_minimize(X, y, mu: float, steps: int = 5000, learning_rate: float | None = None) -> np.ndarray:
    """Plain gradient descent on the ridge objective from zero.

    Without an explicit learning rate the step is 1/L with L bounded by the
    Frobenius norm of the Hessian. Aborts if the objective rises for 10
    consecutive steps.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if learning_rate is None:
        A = np.hstack([np.ones((n, 1)), X])
        L = 2.0 * (np.sqrt(np.sum((A.T @ A) ** 2)) / n + mu)
        learning_rate = 1.0 / L
    psi = np.zeros(X.shape[1] + 1)
    prev = ridge_objective(psi, X, y, mu)
    rising = 0
    for step in range(steps):
        psi = psi - learning_rate * ridge_gradient(psi, X, y, mu)
        cur = ridge_objective(psi, X, y, mu)
        rising = rising + 1 if cur > prev else 0
        prev = cur
        if rising >= 10 or not np.isfinite(cur):
            raise OracleError(f"gradient descent diverged at step {step}: objective {cur!r}")
    return psi
