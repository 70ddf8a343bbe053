"""Delay embeddings of a Lorenz coordinate and the Simplex forecaster.

Run with ``python demos/02_delay_embedding_and_simplex.py``.
"""
from deepedm.dynamics import simulate
from deepedm.edm import RecallConfig, SimplexConfig, knn_recall, simplex_forecast
from deepedm.embedding import delay_embed_array
from deepedm.metrics import mse, naive_forecast

# %% Simulate the chaotic system and look at one coordinate
traj = simulate("lorenz_chaotic", sigma_noise=0.0, n_steps=3000)
x = traj.observations[:, 0]
print("x range", x.min().round(2), x.max().round(2))

# %% Delay vectors stack lagged copies, most recent first
emb = delay_embed_array(x[:6], delta_t=3)
print("delay vectors (columns are time steps)\n", emb)

# %% How well do delay neighbours recover true state-space neighbours?
# A finer time step keeps consecutive points close on the attractor.
fine = simulate("lorenz_chaotic", 0.0, dt=0.001, n_steps=1000)
noisy = simulate("lorenz_chaotic", 2.5, seed=1, dt=0.001, n_steps=1000)
for d in (1, 5, 10):
    clean_r = knn_recall(fine, RecallConfig(k=1, delta_t=d))
    noisy_r = knn_recall(noisy, RecallConfig(k=1, delta_t=d))
    print(f"delta_t={d:2d}  clean recall {clean_r:.3f}  noisy recall {noisy_r:.3f}")

# %% Simplex forecasts from a single lookback window
history, future = x[2000:2096], x[2096:2144]
pred = simplex_forecast(history, SimplexConfig(embed_dim=3), steps=48)
naive = naive_forecast(history, 48)
for p in (1, 5, 15, 48):
    s_err, n_err = mse(future[:p], pred[:p]), mse(future[:p], naive[:p])
    print(f"first {p:2d} steps: simplex MSE {s_err:8.3f}  naive MSE {n_err:8.3f}")
