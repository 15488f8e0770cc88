"""Classical incompressible viscoelasticity reference model.

Neo-Hookean equilibrium and per-element non-equilibrium free energies

    psi_eq  = mu/2 (I1bar - 3),      psi_neq_x = mu_x/2 (I1e_x - 3),

with a quadratic dual dissipation potential per Maxwell element,

    phi*_x = I2t_x / (2 eta_x),
    I2t_x  = tr(At_x At_x) / 2,
    At_x   = A Ci - (A : Ci)/3 * I        (equals Ap Ci),

which yields the closed-form evolution law

    dCi/dt = mu/eta * (C - ((Ci^-1 : C)/3) Ci).

This model both labels the synthetic calibration data and serves as an
independent oracle for the trainable potentials.  It implements the same
potential-hook interface as the neural model (see ``material``), so the
integrator and data generator are model agnostic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kinematics as kin
from . import tensor3 as t3


@dataclass
class GroundTruthParams:
    """Shear modulus (MPa) plus per-element moduli (MPa) and viscosities (MPa s)."""

    mu: float
    mus: np.ndarray
    etas: np.ndarray

    def __post_init__(self):
        self.mus = np.atleast_1d(np.asarray(self.mus, dtype=float))
        self.etas = np.atleast_1d(np.asarray(self.etas, dtype=float))
        if self.mus.shape != self.etas.shape:
            raise ValueError("mus and etas must have matching length")
        if self.mu <= 0 or np.any(self.mus <= 0) or np.any(self.etas <= 0):
            raise ValueError("all parameters must be strictly positive")

    @property
    def taus(self):
        """Relaxation times eta / mu in seconds."""
        return self.etas / self.mus

    @property
    def n_elements(self):
        return self.mus.size

    def to_json(self, path):
        payload = {
            "mu": self.mu,
            "elements": [
                {"mu": float(m), "eta": float(e)}
                for m, e in zip(self.mus, self.etas)
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(
            mu=float(payload["mu"]),
            mus=np.array([e["mu"] for e in payload["elements"]], dtype=float),
            etas=np.array([e["eta"] for e in payload["elements"]], dtype=float),
        )


def default_params():
    """The three-element parameter set used throughout the synthetic studies."""
    return GroundTruthParams(
        mu=0.3, mus=np.array([0.1, 0.2, 0.3]), etas=np.array([0.5, 4.0, 24.0])
    )


def gt_energy(Cbar, Cis, params):
    """Free energy density (MPa) at isochoric deformation Cbar and states Cis."""
    i1, _ = kin.eq_invariants(Cbar)
    psi = 0.5 * params.mu * (i1 - 3.0)
    i1e, _ = kin.neq_invariants(Cbar[..., None, :, :], Cis)
    psi = psi + np.sum(0.5 * params.mus * (i1e - 3.0), axis=-1)
    return psi


def gt_force(Cbar, Ci, mu, Ci_inv=None):
    """Thermodynamic force A = -2 d(psi_neq)/d(Ci) for one element.

    Closed form including the det(Ci)^(1/3) factor of the unimodular
    normalization, so it stays exact off the det(Ci) = 1 manifold.
    """
    if Ci_inv is None:
        Ci_inv = t3.inv_spd(Ci)
    d13 = t3.det_ch(Ci)[..., None, None] ** (1.0 / 3.0)
    s = t3.ddot(Cbar, Ci_inv)
    return mu * d13 * (Ci_inv @ Cbar @ Ci_inv - (s / 3.0)[..., None, None] * Ci_inv)


def gt_dual_dissipation(A, Ci, eta):
    """Dual dissipation potential (MPa/s) for one element."""
    At = A @ Ci - (t3.ddot(A, Ci) / 3.0)[..., None, None] * t3.I3
    i2t = 0.5 * t3.trace(At @ At)
    return i2t / (2.0 * eta)


def gt_evolution_rate(C, Ci, mu, eta, Ci_inv=None):
    """Evolution rate dCi/dt = mu/eta (C - (Ci^-1 : C)/3 Ci) for one element."""
    if Ci_inv is None:
        Ci_inv = t3.inv_spd(Ci)
    s = t3.ddot(Ci_inv, C)
    return (mu / eta) * (C - (s / 3.0)[..., None, None] * Ci)


class GroundTruthMaterial:
    """Potential hooks of the classical model (see ``material`` for the contract).

    Element-batched arguments carry the Maxwell-element axis immediately
    before the tensor axes, e.g. ``Cis`` has shape (..., N, 3, 3).
    """

    def __init__(self, params: GroundTruthParams | None = None):
        self.params = params if params is not None else default_params()

    @property
    def n_elements(self):
        return self.params.n_elements

    def gates(self):
        return np.ones(self.n_elements)

    def active_mask(self):
        return np.ones(self.n_elements, dtype=bool)

    def eq_value(self, ieq):
        return 0.5 * self.params.mu * (ieq[..., 0] - 3.0)

    def eq_derivs(self, ieq):
        out = np.zeros(ieq.shape)
        out[..., 0] = 0.5 * self.params.mu
        return out

    def neq_value(self, ineq):
        return 0.5 * self.params.mus * (ineq[..., 0] - 3.0)

    def neq_derivs(self, ineq):
        out = np.zeros(ineq.shape)
        out[..., 0] = 0.5 * self.params.mus
        return out

    def diss_value(self, Ap, Cis, Cbar):
        At = Ap @ Cis  # equals A Ci - (A:Ci)/3 I
        i2t = 0.5 * t3.trace(At @ At)
        return i2t / (2.0 * self.params.etas)

    def diss_grad_Ap(self, Ap, Cis, Cbar, diss_ref=None):
        inv2eta = 1.0 / (2.0 * self.params.etas)
        return inv2eta[..., None, None] * (Cis @ Ap @ Cis)

    def initial_linear_params(self):
        """Moduli and viscosities of the linearized model.

        The equilibrium and element moduli follow from the invariant
        derivatives at the undeformed state (2 * sum of first derivatives).
        The potential is exactly quadratic in the force, so the initial
        viscosity follows without truncation error from phi* evaluated on a
        unit-norm deviatoric force direction at the reference state.
        """
        from .material import LinearParams

        mu = 2.0 * (0.5 * self.params.mu + 0.0)
        mus = 2.0 * (0.5 * self.params.mus + 0.0)
        d = np.zeros((3, 3))
        d[0, 0], d[1, 1] = 1.0, -1.0
        d /= np.sqrt(2.0)
        ident = np.broadcast_to(t3.I3, (self.n_elements, 3, 3))
        phi = self.diss_value(np.broadcast_to(d, ident.shape), ident, t3.I3)
        etas = t3.ddot(d, d) / (4.0 * phi)
        return LinearParams(mu=mu, mus=mus, etas=etas)
