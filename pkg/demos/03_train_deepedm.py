"""Train DeepEDM on noisy chaotic Lorenz data and compare with the baselines.

Run with ``python demos/03_train_deepedm.py`` (a minute or two on one core).
Results land in ``demo_runs/`` unless ``DEEPEDM_OUT`` points elsewhere.
"""
import os

from deepedm.harness import ExperimentConfig, read_rows, run_experiment

# %% Describe the experiment
# The harness simulates the data, splits it 70/10/20 in time, slides
# windows of lookback 96 and horizon 48, and scores each model on the
# first p forecast steps.
cfg = ExperimentConfig(
    synthetic={"system": "lorenz_chaotic", "sigma_noise": 2.5, "seed": 5},
    model={"delta_t": 5, "latent_dim": 32},
    train={"epochs": 10, "patience": 3, "max_train_windows": 1000},
    eval_horizons=[48],
    prefix_lengths=[1, 5, 15, 48],
    eval_stride=4,
    output_dir=os.environ.get("DEEPEDM_OUT", "demo_runs"),
)

# %% Run it
res = run_experiment(cfg)
print("wrote", res.metrics_csv)

# %% Compare test MSE across models and prefix lengths
rows = read_rows(res.metrics_csv)
by_model = {}
for r in rows:
    by_model.setdefault(r["model"], {})[int(r["p"])] = float(r["mse"])
print("model       p=1     p=5    p=15    p=48")
for model, scores in sorted(by_model.items()):
    print(f"{model:8s}" + "".join(f"{scores[p]:8.2f}" for p in (1, 5, 15, 48)))
