"""Synthetic load-path generation and dataset files.

Smooth random stretch walks: knots with uniformly distributed time increments
and normally distributed stretch increments (resampled when a knot would
leave its bounds) are joined by a natural cubic spline and sampled on a
uniform time grid.  The walk always starts at stretch 1 at time 0.

Randomness comes from a named, seedable 64-bit generator (PCG64); normal
variates are drawn by inverse CDF from uniforms, so identical seeds give
bit-identical paths across platforms and thread counts.

Deformation modes build unimodular, plane-stress-shaped deformation gradients
from stretch series; multiaxial paths additionally rotate a diagonal biaxial
stretch in-plane by an angle path.

Dataset files: one CSV per load path with columns
``step, dt, F11..F33, P11..P33`` (row-major tensor components, units s and
MPa), plus a manifest JSON listing the files and their calibration/test
split.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import ndtri

from . import integrator as ti

CSV_HEADER = (
    "step,dt,"
    "F11,F12,F13,F21,F22,F23,F31,F32,F33,"
    "P11,P12,P13,P21,P22,P23,P31,P32,P33"
)

#: Attempts to draw one in-bounds knot increment before giving up.
RESAMPLE_CAP = 10_000


@dataclass
class RandomWalkSpec:
    """Knot statistics of one smooth random stretch walk."""

    n_knots: int = 20
    dlam_avg: float = 0.1
    lam_min: float = 1.075
    lam_max: float = 2.0
    dt_min: float = 10.0
    dt_max: float = 50.0
    n_inc: int = 300
    mode: str = "uniaxial"  # uniaxial | equibiaxial | multiaxial
    seed: int = 0
    # Angle-path statistics (multiaxial only).
    dphi_avg: float = 0.3
    phi_min: float = -np.pi
    phi_max: float = np.pi

    def __post_init__(self):
        if self.lam_min <= 0.0:
            raise ValueError("stretch bounds must be positive")
        if not 0.0 < self.dt_min <= self.dt_max:
            raise ValueError("time-increment bounds must be positive and ordered")
        if self.n_inc < self.n_knots:
            raise ValueError("need at least one increment per knot")


@dataclass
class LoadPath:
    """Time increments, deformation gradients, and (optional) stress labels."""

    dts: np.ndarray
    Fs: np.ndarray
    Ps: np.ndarray | None = None
    name: str = ""
    kind: str = ""

    @property
    def times(self):
        return np.cumsum(self.dts)


def _normal(rng, sigma):
    """Normal variate via inverse CDF; rng.random is the only entropy source."""
    return sigma * ndtri(rng.random())


def _sample_knots(rng, start, spec: RandomWalkSpec, lo, hi, davg):
    """Knot values obtained from bounded increments; resampled out-of-bounds."""
    sigma = davg / np.sqrt(2.0 / np.pi)
    values = [start]
    for _ in range(spec.n_knots):
        for attempt in range(RESAMPLE_CAP):
            cand = values[-1] + _normal(rng, sigma)
            if lo <= cand <= hi:
                values.append(cand)
                break
        else:
            raise RuntimeError(
                f"could not draw an in-bounds knot increment in {RESAMPLE_CAP} tries"
            )
    return np.array(values)


def _knot_times(rng, spec: RandomWalkSpec):
    dts = spec.dt_min + (spec.dt_max - spec.dt_min) * rng.random(spec.n_knots)
    return np.concatenate([[0.0], np.cumsum(dts)])


def random_walk(spec: RandomWalkSpec, rng=None):
    """Stretch series lambda(t) on a uniform grid of ``n_inc`` increments.

    Returns ``(times, lams)`` of length ``n_inc`` (the implicit initial sample
    lambda(0) = 1 is not included).  With ``dlam_avg = 0`` the walk is
    identically 1.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(spec.seed))
    t_knots = _knot_times(rng, spec)
    if spec.dlam_avg == 0.0:
        lam_knots = np.ones(spec.n_knots + 1)
    else:
        lam_knots = _sample_knots(
            rng, 1.0, spec, spec.lam_min, spec.lam_max, spec.dlam_avg
        )
    spline = CubicSpline(t_knots, lam_knots, bc_type="natural")
    times = np.linspace(0.0, t_knots[-1], spec.n_inc + 1)[1:]
    return times, spline(times)


def random_walk_path(spec: RandomWalkSpec) -> LoadPath:
    """Full deformation path for a random-walk spec (labels not attached).

    Multiaxial walks share one random time grid between the two independent
    stretch series and the in-plane angle series.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    if spec.mode == "multiaxial":
        t_knots = _knot_times(rng, spec)
        grid = np.linspace(0.0, t_knots[-1], spec.n_inc + 1)[1:]

        def series(start, lo, hi, davg):
            knots = _sample_knots(rng, start, spec, lo, hi, davg)
            return CubicSpline(t_knots, knots, bc_type="natural")(grid)

        lams = series(1.0, spec.lam_min, spec.lam_max, spec.dlam_avg)
        lams2 = series(1.0, spec.lam_min, spec.lam_max, spec.dlam_avg)
        phis = series(0.0, spec.phi_min, spec.phi_max, spec.dphi_avg)
        Fs = make_deformation(lams, "multiaxial", lams2=lams2, phis=phis)
        times = grid
    else:
        times, lams = random_walk(spec, rng)
        Fs = make_deformation(lams, spec.mode)
    dts = np.diff(np.concatenate([[0.0], times]))
    return LoadPath(dts=dts, Fs=Fs, name="", kind=f"random_walk_{spec.mode}")


def make_deformation(lams, mode, lams2=None, phis=None):
    """Unimodular plane-stress deformation gradients from stretch series.

    - uniaxial:    F = diag(lam, lam^-1/2, lam^-1/2)
    - equibiaxial: F = diag(lam, lam, lam^-2)
    - multiaxial:  F = Q(phi) diag(lam1, lam2, 1/(lam1 lam2)) Q(phi)^T with an
      in-plane rotation Q about the thickness axis.
    """
    lams = np.asarray(lams, dtype=float)
    if np.any(lams <= 0.0):
        raise ValueError("stretches must be positive")
    n = lams.shape[0]
    Fs = np.zeros((n, 3, 3))
    if mode == "uniaxial":
        Fs[:, 0, 0] = lams
        Fs[:, 1, 1] = lams ** (-0.5)
        Fs[:, 2, 2] = lams ** (-0.5)
    elif mode == "equibiaxial":
        Fs[:, 0, 0] = lams
        Fs[:, 1, 1] = lams
        Fs[:, 2, 2] = lams ** (-2.0)
    elif mode == "multiaxial":
        if lams2 is None or phis is None:
            raise ValueError("multiaxial mode needs lams2 and phis")
        lams2 = np.asarray(lams2, dtype=float)
        phis = np.asarray(phis, dtype=float)
        c, s = np.cos(phis), np.sin(phis)
        d1, d2 = lams, lams2
        Fs[:, 0, 0] = c * c * d1 + s * s * d2
        Fs[:, 0, 1] = c * s * (d2 - d1)
        Fs[:, 1, 0] = Fs[:, 0, 1]
        Fs[:, 1, 1] = s * s * d1 + c * c * d2
        Fs[:, 2, 2] = 1.0 / (d1 * d2)
    else:
        raise ValueError(f"unknown deformation mode: {mode!r}")
    return Fs


def relaxation_path(lam_max, rate, t_hold, n_inc) -> LoadPath:
    """Linear stretch ramp to ``lam_max`` at ``rate``, then a constant hold."""
    if lam_max <= 1.0 or rate <= 0.0:
        raise ValueError("need lam_max > 1 and a positive ramp rate")
    t_ramp = (lam_max - 1.0) / rate
    total = t_ramp + t_hold
    times = np.linspace(0.0, total, n_inc + 1)[1:]
    lams = np.where(times < t_ramp, 1.0 + rate * times, lam_max)
    dts = np.diff(np.concatenate([[0.0], times]))
    return LoadPath(dts=dts, Fs=make_deformation(lams, "uniaxial"),
                    kind="relaxation")


def ramp_cycle_path(lam_max, rate, n_inc) -> LoadPath:
    """Triangle stretch 1 -> lam_max -> 1 at constant |rate|."""
    if lam_max <= 1.0 or rate <= 0.0:
        raise ValueError("need lam_max > 1 and a positive rate")
    t_half = (lam_max - 1.0) / rate
    times = np.linspace(0.0, 2.0 * t_half, n_inc + 1)[1:]
    lams = lam_max - rate * np.abs(times - t_half)
    lams[-1] = 1.0
    dts = np.diff(np.concatenate([[0.0], times]))
    return LoadPath(dts=dts, Fs=make_deformation(lams, "uniaxial"),
                    kind="ramp_cycle")


def label_with_model(path: LoadPath, model, config=None, mode="implicit"):
    """Attach stress labels simulated with ``model`` to a load path."""
    result = ti.simulate_path(path.dts, path.Fs, model, config, mode=mode)
    return LoadPath(dts=path.dts, Fs=ti.complete_plane_stress(path.Fs),
                    Ps=result.P, name=path.name, kind=path.kind)


# -- file formats -----------------------------------------------------------


def write_path_csv(path: LoadPath, filename):
    """One CSV per load path; UTF-8, '.' decimal, LF line endings."""
    T = path.dts.shape[0]
    Ps = path.Ps if path.Ps is not None else np.zeros((T, 3, 3))
    rows = np.column_stack(
        [
            np.arange(1, T + 1, dtype=float),
            path.dts,
            path.Fs.reshape(T, 9),
            Ps.reshape(T, 9),
        ]
    )
    with open(filename, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(
                f"{int(row[0])},"
                + ",".join(format(v, ".17g") for v in row[1:])
                + "\n"
            )


def read_path_csv(filename) -> LoadPath:
    with open(filename, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{filename}: unexpected header {header!r}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 20:
                raise ValueError(f"{filename}:{lineno}: expected 20 columns")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise ValueError(f"{filename}:{lineno}: {exc}") from exc
    data = np.array(rows)
    return LoadPath(
        dts=data[:, 1],
        Fs=data[:, 2:11].reshape(-1, 3, 3),
        Ps=data[:, 11:20].reshape(-1, 3, 3),
        name=os.path.splitext(os.path.basename(filename))[0],
    )


def write_manifest(filename, entries, label_model=None):
    """Manifest JSON: path files with their calibration/test split."""
    payload = {"schema": "gsmvisco-dataset/1", "paths": entries}
    if label_model is not None:
        payload["label_model"] = label_model
    with open(filename, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def read_manifest(filename):
    with open(filename, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema") != "gsmvisco-dataset/1":
        raise ValueError("unrecognized dataset manifest schema")
    base = os.path.dirname(os.path.abspath(filename))
    cal, test = [], []
    for entry in payload["paths"]:
        p = read_path_csv(os.path.join(base, entry["file"]))
        p.kind = entry.get("kind", "")
        (cal if entry.get("split", "calibration") == "calibration" else test).append(p)
    return cal, test
