"""L1-penalized logistic regression fit by proximal gradient descent.

Objective: mean binary cross-entropy + lam * ||w||_1, intercept unpenalized.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .metrics import roc_auc


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def soft_threshold(z, t):
    """Proximal operator of ``t * |.|``: sign(z) * max(|z| - t, 0)."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be non-negative")
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def smooth_loss(w, b, X, y):
    """Mean binary cross-entropy of sigmoid(Xw + b)."""
    z = X @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def smooth_grad(w, b, X, y):
    r = sigmoid(X @ w + b) - y
    return X.T @ r / len(y), float(r.mean())


def objective(w, b, X, y, lam):
    return smooth_loss(w, b, X, y) + lam * float(np.abs(w).sum())


def lambda_max(X, y) -> float:
    """Smallest penalty at which every weight is zero."""
    y = np.asarray(y, dtype=float)
    return float(np.max(np.abs(X.T @ (y - y.mean()))) / len(y))


def lambda_grid(X, y, n: int = 20, ratio: float = 1e-3) -> np.ndarray:
    lmax = lambda_max(X, y)
    return np.geomspace(lmax, lmax * ratio, n)


@dataclass
class LassoConfig:
    lambda_grid: Sequence[float] | None = None  # None -> data-driven default grid
    max_iter: int = 20000
    tol: float = 1e-8
    grad_tol: float = 1e-7
    acceleration: bool = True

    def __post_init__(self):
        if self.lambda_grid is not None:
            g = list(self.lambda_grid)
            if not g:
                raise ValueError("lambda_grid must be non-empty")
            if any(a < b for a, b in zip(g, g[1:])):
                raise ValueError("lambda_grid must be sorted descending")
            if any(v < 0 for v in g):
                raise ValueError("lambda values must be non-negative")


@dataclass
class LinearModel:
    weights: np.ndarray
    intercept: float
    lam: float
    training_log: list[float] = field(default_factory=list)
    feature_names: list[str] | None = None
    n_iter: int = 0
    converged: bool = False

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.weights):
            raise ValueError(f"row width {X.shape[-1]} does not match {len(self.weights)} weights")
        return X @ self.weights + self.intercept

    def to_dict(self) -> dict:
        names = self.feature_names or [f"x{j}" for j in range(len(self.weights))]
        return {
            "kind": "lasso",
            "weights": {n: float(w) for n, w in zip(names, self.weights)},
            "feature_names": names,
            "intercept": float(self.intercept),
            "lambda": float(self.lam),
            "n_iter": self.n_iter,
            "converged": self.converged,
            "final_objective": self.training_log[-1] if self.training_log else None,
        }

    @classmethod
    def from_dict(cls, d) -> "LinearModel":
        names = d["feature_names"]
        return cls(np.array([d["weights"][n] for n in names], dtype=float), d["intercept"],
                   d["lambda"], [], names, d.get("n_iter", 0), d.get("converged", False))


def predict_proba(model: LinearModel, rows) -> np.ndarray:
    return sigmoid(model.decision_function(rows))


def _lipschitz(X) -> float:
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    return 0.25 * float(np.linalg.norm(Xa, 2)) ** 2 / X.shape[0]


def fit_lasso(X, y, lam: float, cfg: LassoConfig | None = None,
              init: tuple[np.ndarray, float] | None = None,
              feature_names: list[str] | None = None) -> LinearModel:
    """Proximal gradient with backtracking (optionally monotone FISTA).

    Stops once the relative objective change falls below ``cfg.tol`` and the
    proximal-gradient residual is below ``cfg.grad_tol``. Every accepted step
    satisfies the sufficient-decrease condition, so the logged objective never
    increases.
    """
    cfg = cfg or LassoConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] != len(y):
        raise ValueError("X and y row counts differ")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("X and y must be finite (impute missing values first)")
    if init is None:
        prev = np.clip(y.mean(), 1e-12, 1 - 1e-12)
        w, b = np.zeros(X.shape[1]), float(np.log(prev / (1 - prev)))
    else:
        w, b = np.array(init[0], dtype=float), float(init[1])

    t = 1.0 / _lipschitz(X)
    F = objective(w, b, X, y, lam)
    if not np.isfinite(F):
        raise FloatingPointError(f"non-finite objective at iteration 0: F={F}, intercept={b}")
    log = [F]
    yw, yb = w.copy(), b
    theta = 1.0
    converged = False
    it = 0

    t_max = 1e3 * t

    def prox_step(vw, vb, step):
        """Backtracking proximal step from (vw, vb); returns point and final step.

        Each call first tries twice the previous step, so the step can recover
        after backtracking; the sufficient-decrease test still guards every step.
        """
        step = min(2.0 * step, t_max)
        f_v = smooth_loss(vw, vb, X, y)
        gw, gb = smooth_grad(vw, vb, X, y)
        while True:
            nw = soft_threshold(vw - step * gw, step * lam)
            nb = vb - step * gb
            dw, db = nw - vw, nb - vb
            bound = f_v + gw @ dw + gb * db + (dw @ dw + db * db) / (2 * step)
            if smooth_loss(nw, nb, X, y) <= bound + 1e-15 * max(1.0, abs(f_v)):
                return nw, nb, step
            step *= 0.5
            if step < 1e-20:
                raise FloatingPointError("backtracking step underflow")

    for it in range(1, cfg.max_iter + 1):
        if cfg.acceleration:
            zw, zb, t = prox_step(yw, yb, t)
            Fz = objective(zw, zb, X, y, lam)
            if Fz <= F:
                accepted = True
                theta_next = (1 + np.sqrt(1 + 4 * theta * theta)) / 2
                yw = zw + ((theta - 1) / theta_next) * (zw - w)
                yb = zb + ((theta - 1) / theta_next) * (zb - b)
                new_w, new_b, F_new = zw, zb, Fz
                theta = theta_next
            else:
                # restart momentum from the current iterate
                accepted = False
                new_w, new_b, F_new = w, b, F
                yw, yb, theta = w.copy(), b, 1.0
        else:
            new_w, new_b, t = prox_step(w, b, t)
            F_new = objective(new_w, new_b, X, y, lam)
            accepted = True

        if not np.isfinite(F_new) or not np.all(np.isfinite(new_w)):
            raise FloatingPointError(
                f"non-finite objective at iteration {it}: F={F_new}, intercept={new_b}, "
                f"|w|_inf={np.max(np.abs(new_w)) if new_w.size else 0.0}, step={t}")
        rel = abs(F - F_new) / max(abs(F), 1.0)
        w, b, F = new_w, new_b, F_new
        log.append(F)
        if accepted and rel < cfg.tol:
            gw, gb = smooth_grad(w, b, X, y)
            pw = soft_threshold(w - t * gw, t * lam)
            gmap = max(np.max(np.abs(w - pw)) if w.size else 0.0, abs(t * gb)) / t
            if gmap < cfg.grad_tol:
                converged = True
                break

    return LinearModel(w, b, float(lam), log, feature_names, it, converged)


def kkt_violation(model: LinearModel, X, y) -> float:
    """Largest violation of the lasso optimality conditions.

    Active weights need gradient = -lam * sign(w); zero weights need
    |gradient| <= lam; the intercept gradient must vanish.
    """
    gw, gb = smooth_grad(model.weights, model.intercept, np.asarray(X, float), np.asarray(y, float))
    lam = model.lam
    active = model.weights != 0
    v_active = np.abs(gw[active] + lam * np.sign(model.weights[active]))
    v_zero = np.maximum(np.abs(gw[~active]) - lam, 0.0)
    parts = [abs(gb)]
    if v_active.size:
        parts.append(float(v_active.max()))
    if v_zero.size:
        parts.append(float(v_zero.max()))
    return max(parts)


def lasso_path(X, y, grid: Sequence[float], cfg: LassoConfig | None = None,
               feature_names: list[str] | None = None) -> list[LinearModel]:
    """Fit along a descending grid with warm starts."""
    models = []
    init = None
    for lam in grid:
        m = fit_lasso(X, y, float(lam), cfg, init=init, feature_names=feature_names)
        models.append(m)
        init = (m.weights, m.intercept)
    return models


def select_lambda(X, y, cfg: LassoConfig | None = None, val_fraction: float = 0.2,
                  seed: int = 0) -> float:
    """Grid value with the best validation ROC AUC; ties go to the larger lambda."""
    cfg = cfg or LassoConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    rng = np.random.default_rng([seed, 2])
    perm = rng.permutation(len(y))
    n_val = int(round(val_fraction * len(y)))
    va, tr = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    grid = list(cfg.lambda_grid) if cfg.lambda_grid is not None else list(lambda_grid(X[tr], y[tr]))
    if len(grid) == 1:
        return float(grid[0])
    best_lam, best_auc = None, -np.inf
    for m in lasso_path(X[tr], y[tr], grid, cfg):
        auc = roc_auc(predict_proba(m, X[va]), y[va])
        # descending grid: strict improvement needed, so ties keep the larger lambda
        if auc > best_auc:
            best_lam, best_auc = m.lam, auc
    return float(best_lam)


def save_model(path: str | Path, model: LinearModel, scaler=None, metadata=None) -> Path:
    d = model.to_dict()
    d["scaler"] = None if scaler is None else scaler.to_dict()
    d["metadata"] = metadata or {}
    path = Path(path)
    path.write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
    return path
