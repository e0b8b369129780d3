"""L1-penalized logistic regression: path, sparsity, optimality, selection."""
# %%
import numpy as np

from asthma_risk import lasso, metrics

rng = np.random.default_rng(4)
X = rng.normal(size=(1500, 12))
w_true = np.r_[1.5, -1.0, 0.7, np.zeros(9)]
y = (rng.random(1500) < lasso.sigmoid(X @ w_true - 2.0)).astype(float)

# %% Largest useful penalty and a log-spaced grid below it
grid = lasso.lambda_grid(X, y)
print(f"lambda_max {grid[0]:.4f}, smallest {grid[-1]:.2e}")
for m in lasso.lasso_path(X, y, grid[::4]):
    print(f"lambda {m.lam:.2e}: {np.count_nonzero(m.weights):2d} nonzero, "
          f"{m.n_iter:4d} iterations, KKT {lasso.kkt_violation(m, X, y):.1e}")

# %% Choose lambda by validation AUC, refit, score held-out data
lam = lasso.select_lambda(X[:1000], y[:1000], lasso.LassoConfig(lambda_grid=list(grid)), seed=4)
model = lasso.fit_lasso(X[:1000], y[:1000], lam)
print("chosen lambda", round(lam, 5), "weights", np.round(model.weights, 2))
print("held-out ROC AUC", round(metrics.roc_auc(lasso.predict_proba(model, X[1000:]), y[1000:]), 3))
