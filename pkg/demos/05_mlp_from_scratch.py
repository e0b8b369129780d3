"""Two-hidden-layer network: gradient check, XOR, dropout, training curve."""
# %%
import numpy as np

from asthma_risk import mlp

# %% Backprop against central differences on a tiny network
cfg = mlp.MlpConfig(hidden_sizes=(4, 3), dropout_rate=0.5, seed=5)
model = mlp.init_model(3, cfg)
rng = np.random.default_rng(5)
X = rng.normal(size=(6, 3))
y = (rng.random(6) < 0.5).astype(float)
masks = mlp.draw_masks(model, 6, rng)
_, cache = mlp.forward(model, X, "train", masks=masks)
dW, _ = mlp.backward(model, cache, y)


def loss():
    z = mlp.forward(model, X, "train", masks=masks)[1].logits
    return float(np.mean(np.logaddexp(0, z) - y * z))


W = model.weights[0]
h = 1e-5
W[0, 0] += h
up = loss()
W[0, 0] -= 2 * h
down = loss()
W[0, 0] += h
print("analytic", dW[0][0, 0], "numeric", (up - down) / (2 * h))

# %% XOR needs the hidden layers
Xx = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], float)
yx = np.array([0, 1, 1, 0], float)
net = mlp.train(Xx, yx, mlp.MlpConfig(hidden_sizes=(8, 8), dropout_rate=0.0, batch_size=4, epochs=2000))
print("XOR predictions", np.round(mlp.predict_proba(net, Xx), 3))

# %% Default settings on a noisy nonlinear problem
X = rng.normal(size=(2000, 5))
y = (rng.random(2000) < 1 / (1 + np.exp(-(X[:, 0] * X[:, 1] * 2 - 1)))).astype(float)
net = mlp.train(X, y, mlp.MlpConfig(epochs=20, seed=5))
print("epoch losses", np.round(net.training_log[::5], 4))
