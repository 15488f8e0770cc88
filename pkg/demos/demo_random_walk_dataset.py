"""Synthetic calibration corpus: smooth random stretch walks.

Generates the three calibration walks (two uniaxial, one equibiaxial) plus a
held-out uniaxial test walk, labels them with the classical reference model,
and writes the dataset (CSV files + manifest) to ./walk_dataset.

The same thing is available from the command line:

    gsmvisco gen --spec <spec.json> --out walk_dataset

Run:  python demos/demo_random_walk_dataset.py
"""

import os

import numpy as np

from gsmvisco import datagen as dg
from gsmvisco import groundtruth as gt

OUT = "walk_dataset"
os.makedirs(OUT, exist_ok=True)

model = gt.GroundTruthMaterial()
rows = [
    ("cal_uniaxial_slow", "calibration",
     dict(dlam_avg=0.1, lam_min=1.075, lam_max=2.0, dt_min=10.0, dt_max=50.0,
          mode="uniaxial", seed=201)),
    ("cal_equibiaxial", "calibration",
     dict(dlam_avg=0.05, lam_min=1.075, lam_max=1.5, dt_min=5.0, dt_max=25.0,
          mode="equibiaxial", seed=202)),
    ("cal_uniaxial_fast", "calibration",
     dict(dlam_avg=0.1, lam_min=1.075, lam_max=2.0, dt_min=1.0, dt_max=5.0,
          mode="uniaxial", seed=203)),
    ("test_uniaxial", "test",
     dict(dlam_avg=0.1, lam_min=1.075, lam_max=2.0, dt_min=5.0, dt_max=25.0,
          mode="uniaxial", seed=204)),
]

entries = []
for name, split, kw in rows:
    spec = dg.RandomWalkSpec(n_knots=20, n_inc=300, **kw)
    path = dg.random_walk_path(spec)
    path = dg.label_with_model(path, model)
    path.name = name
    lam = path.Fs[:, 0, 0]
    rate = np.abs(np.diff(lam) / np.diff(path.times))
    print(f"{name:<20} {split:<12} stretch in [{lam.min():.3f}, {lam.max():.3f}], "
          f"max |rate| {rate.max():.4f} 1/s, peak |P11| {np.abs(path.Ps[:, 0, 0]).max():.3f} MPa")
    fname = f"{name}.csv"
    dg.write_path_csv(path, os.path.join(OUT, fname))
    entries.append({"file": fname, "name": name, "kind": path.kind, "split": split})

dg.write_manifest(os.path.join(OUT, "manifest.json"), entries,
                  {"type": "ground_truth", "params": {
                      "mu": 0.3,
                      "elements": [{"mu": 0.1, "eta": 0.5},
                                   {"mu": 0.2, "eta": 4.0},
                                   {"mu": 0.3, "eta": 24.0}]}})
print(f"dataset written to ./{OUT}")
