"""Reference implementations kept deliberately naive and independent of the package."""
import math

import numpy as np


def irls_logistic(X, y, iters=100, tol=1e-14):
    """Unpenalized logistic regression by Newton/IRLS; returns (weights, intercept)."""
    A = np.hstack([np.ones((len(y), 1)), X])
    beta = np.zeros(A.shape[1])
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(A @ beta)))
        W = p * (1 - p)
        H = A.T @ (A * W[:, None])
        step = np.linalg.solve(H, A.T @ (y - p))
        beta += step
        if np.max(np.abs(step)) < tol:
            break
    return beta[1:], beta[0]


def pairwise_auc(scores, labels):
    """O(n^2) Mann-Whitney count with half credit for ties, counted in integers."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    num = 0
    for p in pos:
        for q in neg:
            num += 2 if p > q else 1 if p == q else 0
    return num / (2 * len(pos) * len(neg))


def central_diff(f, x, h=1e-5):
    """Numerical gradient of scalar f at array x (x is restored afterwards)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def f1_reference(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def log_loss(y, p):
    return -sum(math.log(pi) if yi else math.log(1 - pi) for yi, pi in zip(y, p)) / len(y)
