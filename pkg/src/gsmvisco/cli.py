"""Command line entry point.

Subcommands
-----------
``gen``
    Generate a labeled synthetic dataset (CSV files plus manifest) from a
    generation spec JSON.
``train``
    Calibrate a neural model on a dataset manifest; writes the model JSON and
    a training report.
``predict``
    Simulate a load-path CSV with a model file and write the stress series.
``lincheck``
    Extract and print the initial shear moduli, viscosities, and relaxation
    times of a model.
``verify``
    Run the built-in property suites (tensor algebra, kinematics, classical
    model, constitutive assembly, integrators, gates); exit code 0 iff all
    selected suites pass.

Every command is deterministic given its inputs and seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import calibrate as cal
from . import datagen as dg
from . import ficnn
from . import groundtruth as gt
from . import integrator as ti
from . import kinematics as kin
from . import material as mat
from . import tensor3 as t3


def load_model(path):
    """Model file dispatch: neural model schema or classical parameter file."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if isinstance(payload, dict) and payload.get("schema") == "gsmvisco-model/1":
        return ficnn.NeuralMaterial.from_json(path)
    if isinstance(payload, dict) and "mu" in payload and "elements" in payload:
        return gt.GroundTruthMaterial(gt.GroundTruthParams.from_json(path))
    raise ValueError(f"{path}: not a recognized model file")


def _integ_config(args, base=None):
    cfg = base if base is not None else ti.IntegratorConfig()
    if args.tol is not None:
        cfg.tol = args.tol
    if args.max_iter is not None:
        cfg.n_iter = args.max_iter
    return cfg


# -- gen ------------------------------------------------------------------------


def _build_path(entry, base_seed, index):
    kind = entry["kind"]
    n_inc = int(entry.get("n_inc", 300))
    if kind == "random_walk":
        spec = dg.RandomWalkSpec(
            n_knots=int(entry.get("n_knots", 20)),
            dlam_avg=float(entry.get("dlam_avg", 0.1)),
            lam_min=float(entry.get("lam_min", 1.075)),
            lam_max=float(entry.get("lam_max", 2.0)),
            dt_min=float(entry.get("dt_min", 10.0)),
            dt_max=float(entry.get("dt_max", 50.0)),
            n_inc=n_inc,
            mode=entry.get("mode", "uniaxial"),
            seed=int(entry.get("seed", base_seed + index)),
            dphi_avg=float(entry.get("dphi_avg", 0.3)),
        )
        return dg.random_walk_path(spec)
    if kind == "relaxation":
        return dg.relaxation_path(
            float(entry["lam_max"]), float(entry["rate"]),
            float(entry.get("t_hold", 0.0)), n_inc
        )
    if kind == "ramp_cycle":
        return dg.ramp_cycle_path(
            float(entry["lam_max"]), float(entry["rate"]), n_inc
        )
    raise ValueError(f"unknown path kind: {kind!r}")


def cmd_gen(args):
    with open(args.spec, encoding="utf-8") as fh:
        spec = json.load(fh)
    entries = spec.get("paths")
    if not entries:
        raise ValueError("generation spec lists no paths")
    label = spec.get("label_model", "default")
    if label == "default":
        params = gt.default_params()
    else:
        params = gt.GroundTruthParams(
            mu=float(label["mu"]),
            mus=np.array([e["mu"] for e in label["elements"]], dtype=float),
            etas=np.array([e["eta"] for e in label["elements"]], dtype=float),
        )
    model = gt.GroundTruthMaterial(params)
    os.makedirs(args.out, exist_ok=True)
    config = _integ_config(args)
    manifest = []
    for i, entry in enumerate(entries):
        path = _build_path(entry, args.seed, i)
        path = dg.label_with_model(path, model, config)
        name = entry.get("name", f"{entry['kind']}_{i:02d}")
        fname = f"{name}.csv"
        dg.write_path_csv(path, os.path.join(args.out, fname))
        manifest.append(
            {
                "file": fname,
                "name": name,
                "kind": path.kind or entry["kind"],
                "split": entry.get("split", "calibration"),
            }
        )
    label_desc = {
        "type": "ground_truth",
        "params": {
            "mu": params.mu,
            "elements": [
                {"mu": float(m), "eta": float(e)}
                for m, e in zip(params.mus, params.etas)
            ],
        },
    }
    dg.write_manifest(os.path.join(args.out, "manifest.json"), manifest,
                      label_desc)
    print(f"wrote {len(manifest)} paths + manifest.json to {args.out}")
    return 0


# -- train ----------------------------------------------------------------------


def cmd_train(args):
    cfg = cal.TrainConfig.from_json(args.config) if args.config else cal.TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    cfg.integrator = _integ_config(args, cfg.integrator)
    cal_paths, test_paths = dg.read_manifest(args.dataset)
    if not cal_paths:
        raise ValueError("dataset manifest has no calibration paths")
    model, report = cal.train(cal_paths, test_paths, cfg)
    model.to_json(args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
    print(
        "trained model -> {} (active elements: {}, best post loss: {:.3e})".format(
            args.out, report["active_elements"], report["post"]["best"]
        )
    )
    return 0


# -- predict ---------------------------------------------------------------------


def cmd_predict(args):
    model = load_model(args.model)
    path = dg.read_path_csv(args.path)
    result = ti.simulate_path(path.dts, path.Fs, model, _integ_config(args),
                              mode=args.integrator)
    out = dg.LoadPath(dts=path.dts, Fs=ti.complete_plane_stress(path.Fs),
                      Ps=result.P, name=path.name)
    dg.write_path_csv(out, args.out)
    print(f"wrote stress series to {args.out} (max |P33| = {result.max_p33:.2e})")
    return 0


# -- lincheck ---------------------------------------------------------------------


def cmd_lincheck(args):
    model = load_model(args.model)
    lp = mat.extract_linear_params(model)
    payload = lp.as_dict()
    print(json.dumps(payload, indent=2))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
    return 0


# -- verify -----------------------------------------------------------------------


def _suite_tensor3(rng):
    basis = [rng.normal(size=(3, 3)) for _ in range(1000)]
    worst = 0.0
    for a in basis:
        h = a - np.trace(a) / 3.0 * np.eye(3)
        worst = max(worst, abs(t3.det3(t3.expm(h)) - 1.0))
    if worst > 1e-10:
        return False, f"det(expm(traceless)) drift {worst:.2e}"
    worst = 0.0
    for a in basis:
        s = a @ a.T + 0.5 * np.eye(3)
        r = t3.sqrtm_spd(s)
        worst = max(worst, float(np.max(np.abs(r @ r - s)) / np.max(np.abs(s))))
        worst = max(worst, float(np.max(np.abs(t3.inv_spd(s) @ s - np.eye(3)))))
    if worst > 1e-11:
        return False, f"sqrtm/inv reconstruction {worst:.2e}"
    s1, s2 = (0.5 * (a + a.T) for a in basis[:2])
    lin = t3.pack_kelvin(2.0 * s1 + 3.0 * s2) - (
        2.0 * t3.pack_kelvin(s1) + 3.0 * t3.pack_kelvin(s2)
    )
    if np.max(np.abs(lin)) > 1e-14:
        return False, "Kelvin packing is not linear"
    return True, f"worst reconstruction {worst:.2e}"


def _suite_kinematics(rng):
    lams = (0.25, 0.5, 0.75)
    worst = 0.0
    for _ in range(300):
        a = rng.normal(size=(3, 3))
        x = 0.5 * (a + a.T)
        b = rng.normal(size=(3, 3))
        y = 0.5 * (b + b.T)
        c = rng.normal(size=(3, 3))
        cbar, _ = kin.unimodular(c @ c.T + 0.5 * np.eye(3))
        for lam in lams:
            mid = kin.diss_invariants(lam * x + (1 - lam) * y, cbar)
            bound = lam * kin.diss_invariants(x, cbar) + (1 - lam) * kin.diss_invariants(y, cbar)
            gap = mid - bound
            worst = max(worst, float(np.max(gap[..., [1, 2, 6, 8]])))
    if worst > 1e-12:
        return False, f"convexity violation {worst:.2e}"
    return True, f"max midpoint gap {worst:.2e}"


def _suite_groundtruth(rng):
    model = gt.GroundTruthMaterial()
    lp = mat.extract_linear_params(model)
    if not (
        abs(lp.mu - 0.3) < 1e-12
        and np.allclose(lp.mus, [0.1, 0.2, 0.3], atol=1e-12)
        and np.allclose(lp.etas, [0.5, 4.0, 24.0], atol=1e-12)
    ):
        return False, "parameter extraction drifted"
    spec = dg.RandomWalkSpec(n_knots=6, dt_min=2.0, dt_max=10.0, n_inc=300,
                             seed=int(rng.integers(1 << 30)))
    path = dg.random_walk_path(spec)
    res = ti.simulate_path(path.dts, path.Fs, model)
    if res.max_det_drift > 1e-9:
        return False, f"unimodularity drift {res.max_det_drift:.2e}"
    return True, f"det drift {res.max_det_drift:.2e}"


def _suite_material(rng):
    model = gt.GroundTruthMaterial()
    worst = -np.inf
    for _ in range(500):
        a = rng.normal(size=(3, 3)) * 0.4
        F = np.eye(3) + a
        if t3.det3(F) <= 0.2:
            continue
        Cis = []
        for _ in range(model.n_elements):
            b = rng.normal(size=(3, 3)) * 0.3
            s = b @ b.T + np.eye(3)
            Cis.append(s / t3.det_ch(s) ** (1.0 / 3.0))
        Cis = np.stack(Cis)
        worst = max(worst, -float(mat.dissipation_rate(F, Cis, model)))
    if worst > 1e-12:
        return False, f"negative dissipation {worst:.2e}"
    st = mat.stress(np.eye(3), np.broadcast_to(t3.I3, (3, 3, 3)),
                    mat.plane_stress_pressure(np.eye(3), np.broadcast_to(t3.I3, (3, 3, 3)), model),
                    model)
    if np.max(np.abs(st.P)) > 1e-12:
        return False, "nonzero stress at the undeformed state"
    return True, f"min dissipation {-worst:.2e}"


def _suite_integrator(rng):
    worst = 0.0
    for _ in range(100):
        b = rng.normal(size=(3, 3))
        c0 = b @ b.T + 0.5 * np.eye(3)
        c0 /= t3.det_ch(c0) ** (1.0 / 3.0)
        w = rng.normal(size=(3, 3))
        bsym = 0.5 * (w + w.T) * 0.3
        c0_inv = t3.inv_spd(c0)
        h = bsym @ c0_inv - (t3.ddot(bsym, c0_inv) / 3.0) * np.eye(3)
        dt = 0.7
        exact = t3.expm(h * dt) @ c0
        s, si = t3.sqrtm_spd_pair(c0)
        hhat = t3.sym(si @ h @ s)
        mod = s @ t3.expm_sym(hhat * dt) @ s
        worst = max(worst, float(np.max(np.abs(mod - exact))))
        if abs(np.trace(hhat)) > 1e-13:
            return False, "conjugated update factor is not traceless"
    if worst > 1e-12:
        return False, f"constant-H exactness gap {worst:.2e}"
    # Unimodularity along a simulated path of a neural model, whose forces
    # (unlike the classical ones) exercise every projection term.
    model = ficnn.NeuralMaterial.initialize(n_elements=2, seed=int(rng.integers(1 << 30)))
    mat.rescale_initialization(model, 0.15, np.array([5.0, 40.0]))
    path = dg.relaxation_path(1.5, 0.125, t_hold=20.0, n_inc=120)
    res = ti.simulate_path(path.dts, path.Fs, model)
    if res.max_det_drift > 1e-9:
        return False, f"neural-path unimodularity drift {res.max_det_drift:.2e}"
    return True, f"constant-H gap {worst:.2e}, neural det drift {res.max_det_drift:.2e}"


def _suite_gate(rng):
    cfg = cal.LossConfig()
    ones = cal.loss_gate(np.ones(5), cfg)
    zeros = cal.loss_gate(np.zeros(5), cfg)
    if ones != 1.0:
        return False, f"all-open gate loss {ones!r} != 1"
    expected = cfg.delta / (1.0 + cfg.delta)
    if abs(zeros - expected) > 1e-9:
        return False, f"all-closed gate loss {zeros!r}"
    return True, f"closed-gate loss {zeros:.3e}"


SUITES = {
    "tensor3": _suite_tensor3,
    "kinematics": _suite_kinematics,
    "groundtruth": _suite_groundtruth,
    "material": _suite_material,
    "integrator": _suite_integrator,
    "gate": _suite_gate,
}


def cmd_verify(args):
    names = args.suite or list(SUITES)
    rng = np.random.default_rng(args.seed)
    failures = 0
    for name in names:
        if name not in SUITES:
            print(f"FAIL {name}: unknown suite")
            failures += 1
            continue
        ok, detail = SUITES[name](rng)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += 0 if ok else 1
    return 0 if failures == 0 else 1


# -- parser -----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gsmvisco",
        description="Finite-strain incompressible viscoelasticity toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--integrator", choices=["explicit", "implicit"],
                       default="implicit")
        p.add_argument("--tol", type=float, default=None,
                       help="Newton residual tolerance (default 1e-10)")
        p.add_argument("--max-iter", type=int, default=None,
                       help="Newton iteration cap (default 20)")

    p = sub.add_parser("gen", help="generate a labeled synthetic dataset")
    p.add_argument("--spec", required=True, help="generation spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="calibrate a neural model")
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--dataset", required=True, help="dataset manifest JSON")
    p.add_argument("--out", required=True, help="output model JSON")
    p.add_argument("--report", help="training report JSON")
    common(p)
    p.set_defaults(func=cmd_train, seed=None)

    p = sub.add_parser("predict", help="simulate a load path with a model")
    p.add_argument("--model", required=True)
    p.add_argument("--path", required=True, help="load-path CSV")
    p.add_argument("--out", required=True, help="output CSV")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("lincheck", help="extract initial linear parameters")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_lincheck)

    p = sub.add_parser("verify", help="run the built-in property suites")
    p.add_argument("--suite", action="append",
                   help="suite name (repeatable); default: all")
    common(p)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, ti.NonConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
