"""Does penalising unphysical traces and eigenvalues change the forecast?

Four models share seed and budget and differ only in the loss: plain MSE,
MSE + trace penalties, MSE + negative-eigenvalue penalties, and all terms.
For each we report validation MSE and the constraint violations of the
forecast from t = 40 at a few prediction lengths.

Run:  python demos/04_constraint_losses.py [epochs]     (about 25 minutes at 12 epochs)
"""

import sys
from dataclasses import replace

from hubbard_node.evalmetrics import horizon_curves
from hubbard_node.model import ModelParams
from hubbard_node.node import TrainConfig, predict, train
from hubbard_node.pipeline import simulate_point
from hubbard_node.propagator import EvolutionSpec

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 12
data = simulate_point(ModelParams(U=3.1, V=1.0), EvolutionSpec(dt=0.01, t_end=70.0)).data
data.fit_normalizer("global")

base = TrainConfig(epochs=epochs, seed=7, lr_decay=0.85)
alpha = 10.0  # alpha = 1 is too weak next to the 1296-feature MSE
variants = {
    "mse only": base,
    "+ trace": replace(base, alpha_tr_D=alpha, alpha_tr_Q=alpha),
    "+ eigenvalues": replace(base, alpha_psd_D=alpha, alpha_psd_Q=alpha),
    "all terms": replace(base, alpha_tr_D=alpha, alpha_tr_Q=alpha, alpha_psd_D=alpha, alpha_psd_Q=alpha),
}
for name, cfg in variants.items():
    result = train(data, cfg)
    pred = predict(result.model, data.normalizer.apply(data.packed[4000]), 30.0, t0=40.0)
    curves = horizon_curves(data, pred.times, pred.physical(), 40.0, every=10.0)
    print(f"\n{name}: best validation MSE {result.best_val_mse:.4f} ({result.seconds:.0f} s)")
    for row in curves:
        print(f"  t_pred {row['t_pred']:4.0f}  Pearson {row['pearson']:.4f}  tr_D {row['tr_D']:.2e}  "
              f"tr_Q {row['tr_Q']:.2e}  psd_D {row['psd_D']:.2e}  psd_Q {row['psd_Q']:.2e}")
