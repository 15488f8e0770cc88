"""Exponential-map time integration of the internal-variable evolution.

The evolution equations factor as dCi/dt = H Ci with a trace-free H, so the
update

    Ci_new = sqrt(Ci_prev) exp(Hhat dt) sqrt(Ci_prev),
    Hhat   = sym( sqrt(Ci_prev)^-1 H sqrt(Ci_prev) ),

preserves both the unit determinant (tr Hhat = 0) and, unlike the plain
exponential update exp(H dt) Ci_prev, the exact symmetry of every Newton
iterate.  For the actual H of a generalized standard material, H Ci_prev is
symmetric, and then the two updates coincide for frozen H; the conjugated
form is used everywhere so that states remain symmetric by construction.

The implicit step evaluates H at the unknown new state and solves the
resulting nonlinear system with a plain Newton corrector in Kelvin-Mandel
coordinates; the tangent is assembled by forward differences of the residual
(seven residual evaluations per element and iteration).  Non-convergence is
an error, never a silent best-effort state: the calibration loop treats it as
a rejected parameter step.

The path driver enforces plane stress: the out-of-plane stretch follows from
incompressibility, and the pressure-like multiplier is resolved from the zero
out-of-plane-stress condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin
from . import material as mat
from . import tensor3 as t3


@dataclass
class IntegratorConfig:
    """Newton tolerance (Kelvin norm of the residual), iteration cap, FD step."""

    tol: float = 1e-10
    n_iter: int = 20
    fd_step: float = 1e-7


class NonConvergenceError(RuntimeError):
    """Newton corrector failed; carries the step index and last residual norm."""

    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual


@dataclass
class StepContext:
    """Per-step quantities shared by all residual evaluations."""

    Cbar: np.ndarray
    Cbar_inv: np.ndarray
    dt: float
    sqrt_prev: np.ndarray
    inv_sqrt_prev: np.ndarray
    diss_ref: dict | None = None


def _make_context(Ci_prev, F_new, dt, model=None):
    state = kin.isochoric_split(F_new)
    detC = state.J**2
    C_inv = t3.inv_spd(state.C)
    Cbar = state.Cbar
    Cbar_inv = detC[..., None, None] ** (1.0 / 3.0) * C_inv
    sqrt_prev, inv_sqrt_prev = t3.sqrtm_spd_pair(Ci_prev)
    ref_hook = getattr(model, "diss_reference", None)
    diss_ref = ref_hook(Cbar) if ref_hook is not None else None
    return StepContext(Cbar, Cbar_inv, float(dt), sqrt_prev, inv_sqrt_prev,
                       diss_ref)


def evolution_H(model, Cbar, Cbar_inv, Cis, diss_ref=None):
    """Deviatoric evolution factor H for all elements at one deformation."""
    Cis_inv = t3.inv_spd(Cis)
    di = t3.det_ch(Cis)
    d13 = di ** (1.0 / 3.0)
    i1e = d13 * t3.ddot(Cbar[..., None, :, :], Cis_inv)
    i2e = t3.ddot(Cbar_inv[..., None, :, :], Cis) / d13
    ineq = np.stack([i1e, i2e], axis=-1)
    d = model.neq_derivs(ineq)
    g1, g2 = kin.neq_invariant_gradients_Ci(
        Cbar[..., None, :, :], Cis, Cis_inv, Cbar_inv[..., None, :, :]
    )
    A = -2.0 * (d[..., 0, None, None] * g1 + d[..., 1, None, None] * g2)
    Ap = kin.project_force(A, Cis, Cis_inv)
    G = model.diss_grad_Ap(Ap, Cis, Cbar, diss_ref=diss_ref)
    H = mat.evolution_H_from_G(G, Cis, Cis_inv)
    mask = model.active_mask()
    return np.where(mask[..., None, None], H, 0.0)


def _conjugated_update(ctx: StepContext, H):
    hhat = t3.sym(ctx.inv_sqrt_prev @ H @ ctx.sqrt_prev)
    e = t3.expm_sym(hhat * ctx.dt)
    # Symmetrized so every iterate is exactly symmetric, not just to round-off.
    return t3.sym(ctx.sqrt_prev @ e @ ctx.sqrt_prev)


def _residual(ctx: StepContext, model, Ci):
    H = evolution_H(model, ctx.Cbar, ctx.Cbar_inv, Ci, ctx.diss_ref)
    return Ci - _conjugated_update(ctx, H)


def step_explicit(Ci_prev, F_new, dt, model):
    """Explicit exponential update: H frozen at the previous state.

    Equals exp(H dt) Ci_prev up to round-off and returns an exactly symmetric,
    unit-determinant state.
    """
    Ci_prev = np.asarray(Ci_prev, dtype=float)
    if dt == 0.0:
        return Ci_prev.copy()
    ctx = _make_context(Ci_prev, F_new, dt, model)
    H = evolution_H(model, ctx.Cbar, ctx.Cbar_inv, Ci_prev, ctx.diss_ref)
    out = _conjugated_update(ctx, H)
    if not np.all(np.isfinite(out)):
        raise NonConvergenceError("explicit update produced non-finite state")
    return out


def _fd_tangent(ctx, model, Ci, r_flat, fd_step):
    """Forward-difference Newton tangent in Kelvin coordinates, (N, 6, 6)."""
    basis = t3.kelvin_basis()  # (6, 3, 3)
    h = fd_step * (1.0 + t3.norm(Ci))  # (N,)
    pert = Ci + h[:, None, None] * basis[:, None, :, :]  # (6, N, 3, 3)
    r_pert = t3.pack_kelvin(_residual(ctx, model, pert))  # (6, N, 6)
    k = (r_pert - r_flat) / h[:, None]  # (6, N, 6)
    return np.moveaxis(k, 0, -1)  # columns indexed by the perturbed component


def newton_tangent(Ci, Ci_prev, F_new, dt, model, config=None):
    """Tangent dR/dCi of the implicit residual, packed as (N, 6, 6).

    The matrix has minor but not major symmetry; it is what the Newton solve
    and the adjoint of the calibration loop factor.
    """
    config = config or IntegratorConfig()
    ctx = _make_context(np.asarray(Ci_prev, dtype=float), F_new, dt, model)
    r = t3.pack_kelvin(_residual(ctx, model, Ci))
    return _fd_tangent(ctx, model, Ci, r, config.fd_step)


@dataclass
class StepDiagnostics:
    iterations: int
    residual_norm: float
    residual_history: list = field(default_factory=list)


def step_implicit(Ci_prev, F_new, dt, model, config=None, step_index=None):
    """One implicit exponential-map step solved by Newton iteration.

    Returns ``(Ci_new, diagnostics)``.  Raises :class:`NonConvergenceError`
    when the iteration cap is exceeded or an iterate leaves the SPD cone.
    """
    config = config or IntegratorConfig()
    Ci_prev = np.asarray(Ci_prev, dtype=float)
    if dt == 0.0:
        return Ci_prev.copy(), StepDiagnostics(0, 0.0)
    ctx = _make_context(Ci_prev, F_new, dt, model)
    try:
        H0 = evolution_H(model, ctx.Cbar, ctx.Cbar_inv, Ci_prev, ctx.diss_ref)
        Ci = _conjugated_update(ctx, H0)
        history = []
        for j in range(config.n_iter + 1):
            r = t3.pack_kelvin(_residual(ctx, model, Ci))
            rn = float(np.max(np.linalg.norm(r, axis=-1)))
            history.append(rn)
            if not np.isfinite(rn):
                raise NonConvergenceError(
                    "non-finite residual", step=step_index, residual=rn
                )
            if rn <= config.tol:
                return Ci, StepDiagnostics(j, rn, history)
            if j == config.n_iter:
                break
            k = _fd_tangent(ctx, model, Ci, r, config.fd_step)
            try:
                dc = np.linalg.solve(k, -r[..., None])[..., 0]
            except np.linalg.LinAlgError as exc:
                raise NonConvergenceError(
                    "singular Newton tangent", step=step_index, residual=rn
                ) from exc
            Ci = Ci + t3.unpack_kelvin(dc)
    except t3.SPDError as exc:
        raise NonConvergenceError(
            f"state left the SPD cone: {exc}", step=step_index
        ) from exc
    raise NonConvergenceError(
        f"Newton did not reach tol={config.tol} in {config.n_iter} iterations",
        step=step_index,
        residual=rn,
    )


@dataclass
class PathResult:
    """Per-step states and stresses of one simulated load path."""

    states: np.ndarray  # (T, N, 3, 3)
    P: np.ndarray  # (T, 3, 3)
    p_tilde: np.ndarray  # (T,)
    iterations: np.ndarray  # (T,)
    residual_norms: np.ndarray  # (T,)
    converged: bool
    max_det_drift: float
    max_p33: float


def complete_plane_stress(Fs):
    """Validate the plane-stress zero pattern and fill the 33 stretch.

    Incompressibility fixes F33 = 1 / (F11 F22 - F12 F21); the input value of
    that component is overwritten.
    """
    Fs = np.array(Fs, dtype=float)
    off = [(0, 2), (1, 2), (2, 0), (2, 1)]
    if any(np.any(Fs[..., i, j] != 0.0) for i, j in off):
        raise ValueError("plane stress requires F13 = F23 = F31 = F32 = 0")
    minor = Fs[..., 0, 0] * Fs[..., 1, 1] - Fs[..., 0, 1] * Fs[..., 1, 0]
    if np.any(minor <= 0.0):
        raise ValueError("in-plane deformation must have positive determinant")
    Fs[..., 2, 2] = 1.0 / minor
    return Fs


def simulate_path(dts, Fs, model, config=None, mode="implicit",
                  pressure_resolver=None):
    """Drive a plane-stress deformation path from the undeformed state.

    ``dts`` has shape (T,), ``Fs`` has shape (T, 3, 3); initial conditions are
    F = Ci = identity.  ``mode`` selects the implicit (Newton-corrected) or
    explicit exponential update.  ``pressure_resolver(F, Cis, model)`` may
    replace the built-in plane-stress multiplier.

    Raises :class:`NonConvergenceError` with the failing step index when an
    implicit step does not converge.
    """
    config = config or IntegratorConfig()
    dts = np.asarray(dts, dtype=float)
    Fs = complete_plane_stress(Fs)
    if dts.shape[0] != Fs.shape[0]:
        raise ValueError("time-increment and deformation series lengths differ")
    resolver = pressure_resolver

    T = dts.shape[0]
    N = model.n_elements
    states = np.empty((T, N, 3, 3))
    iters = np.zeros(T, dtype=int)
    resnorms = np.zeros(T)
    Ci = np.broadcast_to(t3.I3, (N, 3, 3)).copy()
    for n in range(T):
        if mode == "implicit":
            Ci, diag = step_implicit(
                Ci, Fs[n], dts[n], model, config, step_index=n
            )
            iters[n] = diag.iterations
            resnorms[n] = diag.residual_norm
        elif mode == "explicit":
            Ci = step_explicit(Ci, Fs[n], dts[n], model)
        else:
            raise ValueError(f"unknown integrator mode: {mode!r}")
        states[n] = Ci
    # Stresses for the whole path in one batched assembly.
    if resolver is None:
        res = mat.plane_stress_response(Fs, states, model)
    else:
        p = resolver(Fs, states, model)
        res = mat.stress(Fs, states, p, model)
    det_drift = float(np.max(np.abs(t3.det_ch(states) - 1.0)))
    return PathResult(
        states=states,
        P=res.P,
        p_tilde=np.asarray(res.p_tilde, dtype=float),
        iterations=iters,
        residual_norms=resnorms,
        converged=True,
        max_det_drift=det_drift,
        max_p33=float(np.max(np.abs(res.P[:, 2, 2]))),
    )
