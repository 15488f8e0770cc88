"""Constitutive mechanics assembled from a model's potential hooks.

A model (classical ``GroundTruthMaterial`` or trainable ``NeuralMaterial``)
exposes derivative hooks of its three potential families with respect to
their invariant inputs:

- ``eq_value(ieq)`` / ``eq_derivs(ieq)``: equilibrium energy on
  (I1bar, I2bar), normalized to vanish at (3, 3);
- ``neq_value(ineq)`` / ``neq_derivs(ineq)``: per-element non-equilibrium
  energy on (I1e, I2e), gate included;
- ``diss_value(Ap, Cis, Cbar)`` / ``diss_grad_Ap(Ap, Cis, Cbar)``: dual
  dissipation potential and its gradient with respect to the projected force;
- ``gates()``, ``active_mask()``, ``initial_linear_params()``.

Everything here is generic mechanics over those hooks: first Piola-Kirchhoff
stress via the chain rule through the invariant gradients (finite differences
appear only in tests), thermodynamic forces, evolution rates with their
deviatoric factor H, linear-parameter extraction, and the small-strain
generalized-Maxwell response used for linearization checks.

The pressure-like Lagrange multiplier enforcing incompressibility is owned by
the boundary-condition solve in ``integrator``; stress functions here take it
as an argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kinematics as kin
from . import tensor3 as t3


@dataclass
class LinearParams:
    """Initial shear moduli (MPa) and viscosities (MPa s) of the linearization."""

    mu: float
    mus: np.ndarray
    etas: np.ndarray

    @property
    def taus(self):
        with np.errstate(invalid="ignore"):
            return self.etas / self.mus

    def as_dict(self):
        return {
            "mu": float(self.mu),
            "mus": [float(v) for v in self.mus],
            "etas": [float(v) for v in self.etas],
            "taus": [float(v) for v in self.taus],
        }


@dataclass
class StressResult:
    """First Piola-Kirchhoff stress with its additive contributions."""

    P: np.ndarray
    p_tilde: float
    P_eq: np.ndarray
    P_neq: np.ndarray  # (N, 3, 3), zero rows for inactive elements


def _neq_state(C, Cis, C_inv=None, detC=None):
    """Shared kinematic quantities of the non-equilibrium branches."""
    if C_inv is None:
        C_inv = t3.inv_spd(C)
    if detC is None:
        detC = t3.det_ch(C)
    Cbar = detC[..., None, None] ** (-1.0 / 3.0) * C
    Cbar_inv = detC[..., None, None] ** (1.0 / 3.0) * C_inv
    Cis_inv = t3.inv_spd(Cis)
    di = t3.det_ch(Cis)
    d13 = di ** (1.0 / 3.0)
    i1e = d13 * t3.ddot(Cbar[..., None, :, :], Cis_inv)
    i2e = t3.ddot(Cbar_inv[..., None, :, :], Cis) / d13
    ineq = np.stack([i1e, i2e], axis=-1)
    return Cbar, Cbar_inv, Cis_inv, di, ineq


def energy(F, Cis, p_tilde, model):
    """Total free energy density, including the incompressibility term."""
    state = kin.isochoric_split(F)
    i1, i2 = kin.eq_invariants(state.Cbar)
    ieq = np.stack([i1, i2], axis=-1)
    psi = model.eq_value(ieq)
    _, _, _, _, ineq = _neq_state(state.C, Cis)
    active = model.active_mask()
    psi = psi + np.sum(model.neq_value(ineq)[..., active], axis=-1)
    return psi + p_tilde * (state.J - 1.0)


def forces(F, Cis, model):
    """Thermodynamic forces A = -2 d(psi_neq)/d(Ci), shape (..., N, 3, 3)."""
    state = kin.isochoric_split(F)
    return _forces_from_C(state.C, Cis, model)


def _forces_from_C(C, Cis, model, C_inv=None, detC=None):
    Cbar, _, Cis_inv, _, ineq = _neq_state(C, Cis, C_inv, detC)
    d = model.neq_derivs(ineq)
    g1, g2 = kin.neq_invariant_gradients_Ci(Cbar[..., None, :, :], Cis, Cis_inv)
    A = -2.0 * (d[..., 0, None, None] * g1 + d[..., 1, None, None] * g2)
    mask = model.active_mask()
    A = np.where(mask[..., None, None], A, 0.0)
    return A


def stress(F, Cis, p_tilde, model):
    """First Piola-Kirchhoff stress P = 2 F dpsi/dC + p_tilde cof F."""
    F = np.asarray(F, dtype=float)
    state = kin.isochoric_split(F)
    C, detC = state.C, state.J**2
    C_inv = t3.inv_spd(C)
    i1, i2 = kin.eq_invariants(state.Cbar)
    ieq = np.stack([i1, i2], axis=-1)
    eqd = model.eq_derivs(ieq)
    e1, e2 = kin.eq_invariant_gradients(C, C_inv, detC)
    M_eq = eqd[..., 0, None, None] * e1 + eqd[..., 1, None, None] * e2
    P_eq = 2.0 * F @ M_eq

    _, _, Cis_inv, _, ineq = _neq_state(C, Cis, C_inv, detC)
    d = model.neq_derivs(ineq)
    n1, n2 = kin.neq_invariant_gradients_C(
        C[..., None, :, :], Cis, C_inv[..., None, :, :], detC[..., None], Cis_inv
    )
    M_neq = d[..., 0, None, None] * n1 + d[..., 1, None, None] * n2
    mask = model.active_mask()
    M_neq = np.where(mask[..., None, None], M_neq, 0.0)
    P_neq = 2.0 * F[..., None, :, :] @ M_neq

    p_tilde = np.asarray(p_tilde, dtype=float)
    P = P_eq + np.sum(P_neq, axis=-3) + p_tilde[..., None, None] * t3.cof(F)
    return StressResult(P=P, p_tilde=p_tilde, P_eq=P_eq, P_neq=P_neq)


def plane_stress_pressure(F, Cis, model):
    """Lagrange multiplier from the zero out-of-plane-stress condition."""
    base = stress(F, Cis, 0.0, model)
    F33 = F[..., 2, 2]
    return -F33 * (base.P_eq[..., 2, 2] + np.sum(base.P_neq[..., 2, 2], axis=-1))


def plane_stress_response(F, Cis, model):
    """Stress with the plane-stress multiplier resolved, in one assembly."""
    base = stress(F, Cis, 0.0, model)
    F33 = F[..., 2, 2]
    p = -F33 * (base.P_eq[..., 2, 2] + np.sum(base.P_neq[..., 2, 2], axis=-1))
    P = base.P + np.asarray(p)[..., None, None] * t3.cof(F)
    return StressResult(P=P, p_tilde=p, P_eq=base.P_eq, P_neq=base.P_neq)


def evolution_rate(F, Cis, model):
    """Internal-variable rates dCi/dt = 2 dphi*/dA and their factor H.

    Returns ``(rates, H)`` with ``rates = H Ci``; H is deviatoric (trace-free)
    by construction, which is what preserves det Ci = 1 along the flow.
    """
    state = kin.isochoric_split(F)
    return evolution_rate_C(state.C, Cis, model)


def evolution_rate_C(C, Cis, model, C_inv=None, detC=None):
    Cbar, _, Cis_inv, _, _ = _neq_state(C, Cis, C_inv, detC)
    A = _forces_from_C(C, Cis, model, C_inv, detC)
    Ap = kin.project_force(A, Cis, Cis_inv)
    G = model.diss_grad_Ap(Ap, Cis, Cbar)
    H = evolution_H_from_G(G, Cis, Cis_inv)
    s = t3.ddot(G, Cis_inv)
    rates = 2.0 * (G - (s / 3.0)[..., None, None] * Cis)
    mask = model.active_mask()
    rates = np.where(mask[..., None, None], rates, 0.0)
    H = np.where(mask[..., None, None], H, 0.0)
    return rates, H


def evolution_H_from_G(G, Cis, Cis_inv=None):
    """H = 2 (G Ci^-1 - (G : Ci^-1)/3 I) from the dissipation gradient G."""
    if Cis_inv is None:
        Cis_inv = t3.inv_spd(Cis)
    s = t3.ddot(G, Cis_inv)
    return 2.0 * (G @ Cis_inv - (s / 3.0)[..., None, None] * t3.I3)


def dissipation_rate(F, Cis, model):
    """Total dissipation sum_x A_x : dphi*/dA_x; non-negative for admissible models."""
    state = kin.isochoric_split(F)
    A = _forces_from_C(state.C, Cis, model)
    rates, _ = evolution_rate_C(state.C, Cis, model)
    return np.sum(0.5 * t3.ddot(A, rates), axis=-1)


def cauchy_from_first_pk(F, P):
    """Cauchy stress from the first Piola-Kirchhoff stress: P F^T / J."""
    J = t3.det3(F)
    return P @ t3.transpose(F) / J[..., None, None]


def second_pk_from_first_pk(F, P):
    """Second Piola-Kirchhoff stress F^-1 P (plane-stress F is invertible)."""
    return np.linalg.solve(F, P)


def extract_linear_params(model) -> LinearParams:
    """Initial shear moduli and viscosities of the linearized model.

    Delegates to the model's exact formulas (network-weight sums for the
    neural potentials, closed form for the classical model).  A vanishing
    dissipation derivative is reported as infinite viscosity.
    """
    return model.initial_linear_params()


def rescale_initialization(model, mu_target, tau_targets):
    """Scale output layers of a fresh neural model to prescribed initial values.

    After the call, the extracted equilibrium and element moduli all equal
    ``mu_target`` and the extracted relaxation times equal ``tau_targets``.
    Only output-layer and skip weights are scaled (they enter the initial
    parameters linearly); biases are untouched.
    """
    lp = model.initial_linear_params()
    tau_targets = np.asarray(tau_targets, dtype=float)
    if tau_targets.shape != (model.n_elements,):
        raise ValueError("one target relaxation time per element is required")
    if not np.isfinite(lp.mu) or lp.mu <= 0.0 or np.any(lp.mus <= 0.0):
        raise ValueError("extracted moduli must be positive to rescale")
    if np.any(~np.isfinite(lp.etas)) or np.any(lp.etas <= 0.0):
        raise ValueError("extracted viscosities must be positive and finite")
    model.eq_net.scale_output(mu_target / lp.mu)
    model.neq_net.scale_output(mu_target / lp.mus)
    eta_targets = tau_targets * mu_target
    # Scaling dissipation outputs by k multiplies 1/eta by k.
    model.phi_net.scale_output(lp.etas / eta_targets)
    return model


def linear_maxwell_uniaxial(params: LinearParams, dts, strains):
    """Uniaxial small-strain stress of the generalized Maxwell model.

    Incompressible linear viscoelasticity: stress = 3 mu eps +
    sum_x 3 mu_x (eps - e_x) with branch strains relaxing as
    de_x/dt = (eps - e_x)/tau_x.  The update is the exact exponential
    integrator for piecewise-linear strain, so the only error against the
    continuous model is the piecewise-linear interpolation of the input.

    Returns the stress series at the same sampling points (strain at t=0 is
    taken as 0).
    """
    dts = np.asarray(dts, dtype=float)
    strains = np.asarray(strains, dtype=float)
    taus = params.taus
    finite = np.isfinite(taus) & (params.mus > 0.0)
    e = np.zeros(taus.size)
    out = np.empty(strains.size)
    eps_prev = 0.0
    for n, (dt, eps) in enumerate(zip(dts, strains)):
        alpha = np.where(finite, np.exp(-dt / np.where(finite, taus, 1.0)), 0.0)
        deps = eps - eps_prev
        hold = np.where(finite, 1.0 - (taus / dt) * (1.0 - alpha), 0.0)
        e = alpha * e + (1.0 - alpha) * eps_prev + hold * deps
        e = np.where(finite, e, eps)
        out[n] = 3.0 * params.mu * eps + np.sum(
            np.where(finite, 3.0 * params.mus * (eps - e), 0.0)
        )
        eps_prev = eps
    return out
