"""Desk-scale calibration of the neural model, end to end.

A single-element classical model labels one short uniaxial random walk; a
one-element neural model is then calibrated in the two-stage protocol
(explicit pre-training with gate regularization, implicit post-training).
Finishes in well under a minute and prints the recovered initial moduli next
to the generating values.

Run:  python demos/demo_train_tiny.py
"""

import numpy as np

from gsmvisco import calibrate as cal
from gsmvisco import datagen as dg
from gsmvisco import groundtruth as gt
from gsmvisco import material as mat

truth = gt.GroundTruthParams(mu=0.3, mus=[0.2], etas=[4.0])
gtm = gt.GroundTruthMaterial(truth)

spec = dg.RandomWalkSpec(n_knots=8, dlam_avg=0.12, lam_min=1.05, lam_max=1.7,
                         dt_min=2.0, dt_max=10.0, n_inc=60, seed=21)
train_path = dg.label_with_model(dg.random_walk_path(spec), gtm)
train_path.kind = "random_walk_uniaxial"
test_path = dg.label_with_model(
    dg.random_walk_path(dg.RandomWalkSpec(n_knots=8, dlam_avg=0.12,
                                          lam_min=1.05, lam_max=1.7,
                                          dt_min=2.0, dt_max=10.0,
                                          n_inc=60, seed=99)), gtm)

cfg = cal.TrainConfig(n_elements=1, seed=3, taus=(20.0,), pre_maxiter=120,
                      pre_sparse_maxiter=40, post_maxiter=150)
model, report = cal.train([train_path], [test_path], cfg)

lp = mat.extract_linear_params(model)
print("\ngenerating model: mu = %.3f, mu_1 = %.3f, eta_1 = %.2f"
      % (truth.mu, truth.mus[0], truth.etas[0]))
print("calibrated model: mu = %.3f, mu_1 = %.3f, eta_1 = %.2f"
      % (lp.mu, lp.mus[0], lp.etas[0]))
print("gate values:", np.round(report["gates"], 4))
print("calibration MSE:", report["calibration_mse"])
print("held-out MSE:   ", report["test_mse"])
print("elapsed: %.1f s" % report["elapsed_s"])
