"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  The desk-scale calibration (criterion 10) is shared with the
extrapolation check (criterion 12) through a module-scoped fixture and
dominates the runtime.
"""

import time

import numpy as np
import pytest

from gsmvisco import calibrate as cal
from gsmvisco import datagen as dg
from gsmvisco import ficnn
from gsmvisco import groundtruth as gt
from gsmvisco import integrator as ti
from gsmvisco import kinematics as kin
from gsmvisco import material as mat
from gsmvisco import tensor3 as t3

from helpers import make_rng, rand_sym, rand_unimodular_spd


def report(num, name, ok, detail):
    line = f"ACCEPTANCE {num:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


def random_neural(n_elements, seed, mu=0.15, taus=None):
    model = ficnn.NeuralMaterial.initialize(n_elements=n_elements, seed=seed)
    if taus is None:
        taus = (5.0, 10.0, 20.0, 40.0, 80.0)[:n_elements]
    mat.rescale_initialization(model, mu, np.asarray(taus, dtype=float))
    return model


# -- criterion 1 ---------------------------------------------------------------


def test_criterion_01_unimodularity():
    t0 = time.time()
    model = gt.GroundTruthMaterial()
    worst = 0.0
    for seed in range(20):
        spec = dg.RandomWalkSpec(
            n_knots=10, dlam_avg=0.08, lam_min=1.05, lam_max=1.8,
            dt_min=1.0, dt_max=6.0, n_inc=300, seed=100 + seed,
        )
        path = dg.random_walk_path(spec)
        res = ti.simulate_path(path.dts, path.Fs, model)
        worst = max(worst, res.max_det_drift)
    elapsed = time.time() - t0
    report(1, "unimodularity", worst <= 1e-9 and elapsed <= 120.0,
           f"max |det Ci - 1| = {worst:.2e} over 20x300x3, {elapsed:.0f} s")


# -- criterion 2 ---------------------------------------------------------------


class _ConstantHModel:
    def __init__(self, h_const):
        self.h = h_const
        self.n_elements = 1

    def gates(self):
        return np.ones(1)

    def active_mask(self):
        return np.ones(1, dtype=bool)

    def neq_derivs(self, ineq):
        return np.zeros(ineq.shape)

    def diss_grad_Ap(self, Ap, Cis, Cbar, diss_ref=None):
        return 0.5 * (self.h @ Cis)


def test_criterion_02_integrator_exactness():
    rng = make_rng(2)
    worst = 0.0
    for _ in range(100):
        c0 = rand_unimodular_spd(rng)
        b = rand_sym(rng, 0.4)
        c0_inv = t3.inv_spd(c0)
        h = b @ c0_inv - (t3.ddot(b, c0_inv) / 3.0) * np.eye(3)
        dt = rng.uniform(0.05, 1.0)
        exact = t3.expm(h * dt) @ c0
        model = _ConstantHModel(h)
        ex = ti.step_explicit(c0[None], np.eye(3), dt, model)[0]
        im, _ = ti.step_implicit(c0[None], np.eye(3), dt, model)
        worst = max(worst, float(np.max(np.abs(ex - exact))),
                    float(np.max(np.abs(im[0] - exact))))
    report(2, "integrator exactness", worst <= 1e-12,
           f"max per-step gap vs closed form = {worst:.2e} over 100 random H")


# -- criterion 3 ---------------------------------------------------------------


def test_criterion_03_implicit_vs_reference():
    params = gt.default_params()
    model = gt.GroundTruthMaterial(params)
    lam_max, rate, dt, total = 1.5, 0.0625, 0.5, 168.0
    n = int(total / dt)
    times = np.arange(1, n + 1) * dt
    lams = np.minimum(1.0 + rate * times, lam_max)
    Fs = dg.make_deformation(lams, "uniaxial")
    res = ti.simulate_path(np.full(n, dt), Fs, model)

    mus, etas = params.mus, params.etas

    def rate_batch(C, Cis):
        Cinv = t3.inv_spd(Cis)
        s = t3.ddot(Cinv, C)
        return (mus / etas)[:, None, None] * (C - (s / 3.0)[:, None, None] * Cis)

    # Fine-step reference per increment: 1000 fourth-order substeps from the
    # shared previous state at the step's deformation, so the comparison
    # isolates the integrator's per-step defect.
    prev = np.concatenate(
        [np.broadcast_to(np.eye(3), (1, 3, 3, 3)), res.states[:-1]]
    )
    errs = np.empty(n)
    for k in range(n):
        C = Fs[k].T @ Fs[k]
        ci = prev[k].copy()
        h = dt / 1000
        for _ in range(1000):
            k1 = rate_batch(C, ci)
            k2 = rate_batch(C, ci + 0.5 * h * k1)
            k3 = rate_batch(C, ci + 0.5 * h * k2)
            k4 = rate_batch(C, ci + h * k3)
            ci = ci + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        p = mat.plane_stress_pressure(Fs[k], ci, model)
        P_ref = mat.stress(Fs[k], ci, p, model).P
        errs[k] = np.sqrt(np.sum((res.P[k] - P_ref) ** 2))
    rel = float(errs.max() / np.max(np.sqrt(np.sum(res.P**2, axis=(1, 2)))))
    report(3, "implicit vs reference", rel <= 1e-3,
           f"max relative stress error = {rel:.2e} at dt = {dt} s")


# -- criterion 4 ---------------------------------------------------------------


def _linearization_error(model, lp, dt, total):
    amp = 1e-4
    n = int(total / dt)
    times = np.arange(1, n + 1) * dt
    eps = amp * np.clip(times / 2.0, 0.0, 1.0)
    Fs = dg.make_deformation(1.0 + eps, "uniaxial")
    res = ti.simulate_path(np.full(n, dt), Fs, model)
    lin = mat.linear_maxwell_uniaxial(lp, np.full(n, dt), eps)
    return float(np.max(np.abs(res.P[:, 0, 0] - lin)) / np.max(np.abs(lin)))


def test_criterion_04_linearization_consistency():
    params = gt.default_params()
    err_gt = _linearization_error(
        gt.GroundTruthMaterial(params),
        mat.LinearParams(params.mu, params.mus, params.etas),
        dt=0.02, total=160.0,
    )
    model = random_neural(3, seed=44, taus=(5.0, 20.0, 80.0))
    err_nn = _linearization_error(
        model, mat.extract_linear_params(model), dt=0.05, total=160.0
    )
    ok = err_gt <= 0.01 and err_nn <= 0.01
    report(4, "linearization consistency", ok,
           f"rel stress error: classical {err_gt:.2e}, neural {err_nn:.2e}")


# -- criterion 5 ---------------------------------------------------------------


def test_criterion_05_parameter_extraction():
    lp = mat.extract_linear_params(gt.GroundTruthMaterial())
    errs = [
        abs(lp.mu - 0.3),
        float(np.max(np.abs(lp.mus - np.array([0.1, 0.2, 0.3])))),
        float(np.max(np.abs(lp.etas - np.array([0.5, 4.0, 24.0])))),
    ]
    report(5, "parameter extraction", max(errs) <= 1e-12,
           f"max deviation from reference parameters = {max(errs):.2e}")


# -- criterion 6 ---------------------------------------------------------------


def test_criterion_06_initialization_protocol():
    taus = np.array([5.0, 10.0, 20.0, 40.0, 80.0])
    mu_t = 0.15
    model = ficnn.NeuralMaterial.initialize(n_elements=5, seed=66)
    mat.rescale_initialization(model, mu_t, taus)
    lp = mat.extract_linear_params(model)
    e_mu = max(abs(lp.mu - mu_t), float(np.max(np.abs(lp.mus - mu_t))))
    e_tau = float(np.max(np.abs(lp.taus - taus)))
    report(6, "initialization protocol", e_mu <= 1e-10 and e_tau <= 1e-6,
           f"modulus error {e_mu:.2e}, relaxation-time error {e_tau:.2e}")


# -- criterion 7 ---------------------------------------------------------------


def test_criterion_07_gradient_correctness():
    t0 = time.time()
    gtm = gt.GroundTruthMaterial(gt.GroundTruthParams(0.3, [0.2], [1.0]))
    spec = dg.RandomWalkSpec(
        n_knots=4, dlam_avg=0.15, lam_min=1.05, lam_max=1.6,
        dt_min=1.0, dt_max=4.0, n_inc=10, mode="uniaxial", seed=11,
    )
    path = dg.label_with_model(dg.random_walk_path(spec), gtm)
    model = random_neural(1, seed=5, mu=0.25, taus=(5.0,))
    n_P = cal.stress_normalizer([path])
    _, grad = cal.grad_loss(model, [path], n_P)
    rng = make_rng(7)
    worst = 0.0
    for _ in range(20):
        d = rng.normal(size=grad.size)
        fd = cal.fd_directional_grad(model, [path], n_P, d)
        an = float(grad @ (d / np.linalg.norm(d)))
        worst = max(worst, abs(an - fd) / max(1e-12, abs(fd)))
    elapsed = time.time() - t0
    report(7, "gradient correctness", worst <= 1e-4 and elapsed <= 60.0,
           f"max relative error vs central FD = {worst:.2e} over 20 directions, "
           f"{elapsed:.0f} s")


# -- criterion 8 ---------------------------------------------------------------


def test_criterion_08_convexity_and_dissipation():
    rng = make_rng(8)
    n_states = 10_000

    # Midpoint convexity of the force-dependent invariants, batched.
    x = rand_sym(rng, shape=(n_states,))
    y = rand_sym(rng, shape=(n_states,))
    cbar = rand_unimodular_spd(rng, shape=(n_states,))
    convex_gap = -np.inf
    fx = kin.diss_invariants(x, cbar)
    fy = kin.diss_invariants(y, cbar)
    for lam in (0.25, 0.5, 0.75):
        mid = kin.diss_invariants(lam * x + (1 - lam) * y, cbar)
        gap = mid - (lam * fx + (1 - lam) * fy)
        convex_gap = max(convex_gap, float(np.max(gap[:, [1, 2, 6, 8]])))

    # Dissipation-rate non-negativity for the classical and neural models.
    diss_min = np.inf
    for model in (gt.GroundTruthMaterial(), random_neural(3, seed=88, taus=(5.0, 20.0, 80.0))):
        n = model.n_elements
        Fs = np.zeros((n_states, 3, 3))
        Fs[:, :2, :2] = np.eye(2) + 0.25 * rng.normal(size=(n_states, 2, 2))
        minor = Fs[:, 0, 0] * Fs[:, 1, 1] - Fs[:, 0, 1] * Fs[:, 1, 0]
        keep = minor > 0.2
        Fs = Fs[keep]
        Fs[:, 2, 2] = 1.0 / minor[keep]
        cis = rand_unimodular_spd(rng, shape=(Fs.shape[0], n))
        diss_min = min(diss_min, float(np.min(mat.dissipation_rate(Fs, cis, model))))

    ok = convex_gap <= 1e-12 and diss_min >= -1e-12
    report(8, "convexity and GSM dissipation", ok,
           f"max midpoint gap {convex_gap:.2e}, min dissipation {diss_min:.2e} "
           f"on {n_states} states")


# -- criterion 9 ---------------------------------------------------------------


def test_criterion_09_projection_orthogonality():
    rng = make_rng(9)
    n_states = 10_000
    worst = 0.0

    # Classical potential: dphi*/dA assembled through the invariant chain.
    params = gt.default_params()
    cis = rand_unimodular_spd(rng, shape=(n_states, 3))
    cbar = rand_unimodular_spd(rng, shape=(n_states,))
    a = rand_sym(rng, shape=(n_states, 3))
    cis_inv = t3.inv_spd(cis)
    ap = kin.project_force(a, cis, cis_inv)
    g_gt = (1.0 / (2.0 * params.etas))[:, None, None] * (cis @ ap @ cis)
    dphi = kin.project_force_pullback(g_gt, cis, cis_inv)
    scale = np.maximum(1.0, t3.norm(dphi))
    worst = max(worst, float(np.max(np.abs(t3.ddot(dphi, cis_inv)) / scale)))

    # Neural potential: coefficients times analytic invariant gradients in A.
    model = random_neural(3, seed=99, taus=(5.0, 20.0, 80.0))
    iphi = kin.diss_invariants(ap, cbar[:, None])
    i0 = np.broadcast_to(
        kin.diss_invariants_zero_force(cbar)[:, None, :], iphi.shape
    )
    coeffs = model.diss_coeffs(iphi, i0)
    didA = kin.diss_grad_A(ap, cis, cbar[:, None], cis_inv)
    dphi_nn = np.einsum("...g,...gij->...ij", coeffs, didA)
    scale = np.maximum(1.0, t3.norm(dphi_nn))
    worst = max(worst, float(np.max(np.abs(t3.ddot(dphi_nn, cis_inv)) / scale)))

    report(9, "force-gradient orthogonality", worst <= 1e-10,
           f"max |dphi*/dA : Ci^-1| = {worst:.2e} on {n_states} states, both models")


# -- criterion 10 / 12 -----------------------------------------------------------


TRAIN_SEEDS = {"uni_slow": 201, "equibiax": 202, "uni_fast": 203, "held_out": 204}


def desk_dataset():
    gtm = gt.GroundTruthMaterial()
    rows = [
        ("uni_slow", dict(dlam_avg=0.1, lam_min=1.075, lam_max=2.0,
                          dt_min=10.0, dt_max=50.0, mode="uniaxial")),
        ("equibiax", dict(dlam_avg=0.05, lam_min=1.075, lam_max=1.5,
                          dt_min=5.0, dt_max=25.0, mode="equibiaxial")),
        ("uni_fast", dict(dlam_avg=0.1, lam_min=1.075, lam_max=2.0,
                          dt_min=1.0, dt_max=5.0, mode="uniaxial")),
        ("held_out", dict(dlam_avg=0.1, lam_min=1.075, lam_max=2.0,
                          dt_min=5.0, dt_max=25.0, mode="uniaxial")),
    ]
    paths = {}
    for name, kw in rows:
        spec = dg.RandomWalkSpec(n_knots=20, n_inc=100, seed=TRAIN_SEEDS[name], **kw)
        p = dg.random_walk_path(spec)
        p = dg.label_with_model(p, gtm)
        p.name = name
        paths[name] = p
    cal_paths = [paths["uni_slow"], paths["equibiax"], paths["uni_fast"]]
    return cal_paths, [paths["held_out"]]


@pytest.fixture(scope="module")
def desk_training():
    t0 = time.time()
    cal_paths, test_paths = desk_dataset()
    cfg = cal.TrainConfig(
        n_elements=5, seed=1, pre_maxiter=400, pre_sparse_maxiter=450,
        post_maxiter=250, threads=2,
    )
    model, rep = cal.train(cal_paths, test_paths, cfg)
    rep["wall_s"] = time.time() - t0
    return model, rep, cal_paths, test_paths


def test_criterion_10_desk_calibration(desk_training):
    model, rep, cal_paths, test_paths = desk_training
    cal_mse = max(rep["calibration_mse"].values())
    test_mse = max(rep["test_mse"].values())
    active = rep["active_elements"]
    ok = (
        cal_mse <= 1e-3
        and test_mse <= 5e-3
        and active <= 3
        and rep["wall_s"] <= 1800.0
    )
    report(10, "desk-scale calibration", ok,
           f"cal MSE {cal_mse:.2e}, held-out MSE {test_mse:.2e}, "
           f"active gates {active}, {rep['wall_s']:.0f} s")


def test_criterion_12_extrapolation(desk_training):
    model, rep, cal_paths, _ = desk_training
    lam_train = max(float(np.max(p.Fs[:, 0, 0])) for p in cal_paths)
    path = dg.ramp_cycle_path(1.0 + 1.5 * (lam_train - 1.0), 0.05, n_inc=200)
    res = ti.simulate_path(path.dts, path.Fs, model)
    finite = bool(np.all(np.isfinite(res.P)))
    diss_min = np.inf
    for k in range(path.dts.size):
        diss_min = min(diss_min, float(mat.dissipation_rate(path.Fs[k],
                                                            res.states[k], model)))
    ok = finite and res.converged and diss_min >= -1e-10
    report(12, "extrapolation sanity", ok,
           f"ramp to stretch {path.Fs[:, 0, 0].max():.2f} converged, "
           f"min dissipation {diss_min:.2e}")


# -- criterion 11 ----------------------------------------------------------------


def test_criterion_11_gate_loss_normalization():
    cfg = cal.LossConfig()
    ones = cal.loss_gate(np.ones(5), cfg)
    zeros = cal.loss_gate(np.zeros(5), cfg)
    expected = cfg.delta / (1.0 + cfg.delta)
    ok = ones == 1.0 and abs(zeros - expected) <= 1e-9
    report(11, "gate-loss normalization", ok,
           f"all-open loss = {ones!r}, all-closed loss = {zeros:.3e}")
