"""Relaxation tests of the classical reference model.

Ramps the stretch at three different rates to three different maxima, holds,
and simulates the stress response with the implicit exponential-map
integrator.  Writes one CSV per case (columns: time, stretch, P11) that can
be fed to any plotting tool.

Run:  python demos/demo_ground_truth_relaxation.py
"""

import numpy as np

from gsmvisco import datagen as dg
from gsmvisco import groundtruth as gt
from gsmvisco import integrator as ti
from gsmvisco import material as mat

model = gt.GroundTruthMaterial()
lp = mat.extract_linear_params(model)
print("reference model:  mu = %.3g MPa,  mu_x = %s,  tau_x = %s s"
      % (lp.mu, lp.mus, lp.taus))

cases = [(1.25, 0.125), (1.5, 0.0625), (1.75, 0.03125)]
for lam_max, rate in cases:
    path = dg.relaxation_path(lam_max, rate, t_hold=300.0, n_inc=600)
    res = ti.simulate_path(path.dts, path.Fs, model)
    t = path.times
    lam = path.Fs[:, 0, 0]
    p_eq = 0.3 * (lam_max - lam_max**-2)
    print(
        f"lam_max={lam_max:<5} rate={rate:<8} peak P11 = {res.P[:, 0, 0].max():.4f} MPa, "
        f"final P11 = {res.P[-1, 0, 0]:.4f} -> equilibrium {p_eq:.4f} MPa, "
        f"max Newton iters {res.iterations.max()}, det drift {res.max_det_drift:.1e}"
    )
    out = np.column_stack([t, lam, res.P[:, 0, 0]])
    fname = f"relaxation_{lam_max:g}_{rate:g}.csv"
    np.savetxt(fname, out, delimiter=",", header="time,stretch,P11", comments="")
    print(f"  wrote {fname}")
