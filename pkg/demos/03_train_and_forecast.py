"""Learn the 2RDM dynamics at (V, U) = (1, 3.1) and extrapolate from t = 40.

The first 30 J^-1 of the exact trajectory train a neural vector field, the
next 10 J^-1 select the checkpoint, and the forecast starts from the exact
state at t = 40.  We compare against the exact continuation and against the
trivial forecast that simply holds D12(40) fixed, which already scores a high
pooled Pearson coefficient because the packed 2RDM has a large static part.

Run:  python demos/03_train_and_forecast.py [epochs]     (about 10 minutes at 24 epochs)
"""

import sys

import numpy as np

from hubbard_node.evalmetrics import evaluate_prediction, prediction_pearson
from hubbard_node.model import ModelParams
from hubbard_node.node import TrainConfig, predict, train
from hubbard_node.pipeline import simulate_point
from hubbard_node.propagator import EvolutionSpec

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 24

print("simulating the exact trajectory ...")
data = simulate_point(ModelParams(U=3.1, V=1.0), EvolutionSpec(dt=0.01, t_end=70.0)).data
data.fit_normalizer("global")

print(f"training (hidden 512, {epochs} epochs x 25 updates) ...")
result = train(data, TrainConfig(epochs=epochs))
for row in result.validation[:: max(1, epochs // 6)]:
    print(f"  epoch {row['epoch']:3d}  validation MSE {row['val_mse']:9.4f}  trace loss "
          f"{row.get('val_tr_D', float('nan')):.2e}")
print(f"best validation MSE {result.best_val_mse:.4f} after {result.seconds:.0f} s")

start = 4000
pred = predict(result.model, data.normalizer.apply(data.packed[start]), 60.0, t0=40.0)
report = evaluate_prediction(data, pred.times, pred.physical(), 40.0, horizons=(5.0, 10.0, 20.0, 25.0, 30.0),
                             normalized_pred=pred.values, failed_at=pred.failed_at)
print("\n t_pred  Pearson  hold-D12(40)  delta n_1  delta d_1")
for h, p, dn, dd in zip(report.horizons, report.pearson_packed, report.delta_n1, report.delta_d1):
    n = int(round(h / data.dt)) + 1
    hold = prediction_pearson(np.repeat(data.packed[start][None], n, axis=0), data.packed[start:start + n])
    print(f"  {h:5.1f}  {p:7.4f}  {hold:12.4f}  {dn:9.4f}  {dd:9.4f}")
print(f"\nforecast leaves the physical band |D| <= 1 at t_pred = {report.divergence_time}")
