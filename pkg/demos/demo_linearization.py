"""Consistency with small-strain linear viscoelasticity.

At stretch amplitudes of 1e-4 the finite-strain simulation must coincide
with the generalized Maxwell model assembled from the extracted initial
moduli and viscosities.  Shown for the classical reference model and for a
randomly initialized (then rescaled) neural model.

Run:  python demos/demo_linearization.py
"""

import numpy as np

from gsmvisco import datagen as dg
from gsmvisco import ficnn
from gsmvisco import groundtruth as gt
from gsmvisco import integrator as ti
from gsmvisco import material as mat

amp, dt, total = 1e-4, 0.05, 120.0
n = int(total / dt)
times = np.arange(1, n + 1) * dt
eps = amp * np.clip(times / 2.0, 0.0, 1.0)  # ramp 2 s, then hold
Fs = dg.make_deformation(1.0 + eps, "uniaxial")
dts = np.full(n, dt)

for label, model in [
    ("classical", gt.GroundTruthMaterial()),
    ("neural (random init)", None),
]:
    if model is None:
        model = ficnn.NeuralMaterial.initialize(n_elements=3, seed=13)
        mat.rescale_initialization(model, 0.12, np.array([5.0, 20.0, 80.0]))
    lp = mat.extract_linear_params(model)
    res = ti.simulate_path(dts, Fs, model)
    lin = mat.linear_maxwell_uniaxial(lp, dts, eps)
    err = np.max(np.abs(res.P[:, 0, 0] - lin)) / np.max(np.abs(lin))
    print(f"{label:<22} mu={lp.mu:.4f}  taus={np.round(lp.taus, 2)}")
    print(f"{'':<22} max |P11 - linear| / max |linear| = {err:.2e}")
