"""Deformation measures, invariant sets, and their analytic first derivatives.

Conventions
-----------
- ``F`` is the deformation gradient, ``J = det F > 0``, ``C = F^T F``.
- Overbars denote isochoric (unimodular) parts: ``Cbar = J^(-2/3) C``.
- Per Maxwell element, ``Ci`` is the inelastic right Cauchy-Green tensor; its
  unimodular part ``Cibar = det(Ci)^(-1/3) Ci`` enters the elastic invariants.
  The normalization factor is always applied, even though the evolution keeps
  ``det Ci = 1``: this makes gradients with respect to ``Ci`` well defined
  off the unimodular manifold, where Newton iterates may transiently live.
- ``A`` is the stress-like thermodynamic force conjugate to ``Ci``; ``Ap`` is
  its projection that guarantees unimodular inelastic evolution.

All gradient formulas are closed-form tensor calculus and are cross-checked
against central finite differences in the test suite.  Functions broadcast
over leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor3 as t3


@dataclass
class DeformationState:
    """Deformation gradient with its derived measures."""

    F: np.ndarray
    J: np.ndarray
    C: np.ndarray
    Cbar: np.ndarray


def isochoric_split(F):
    """Split ``F`` into volumetric and isochoric content.

    Raises ``ValueError`` for non-positive Jacobians.
    """
    F = np.asarray(F, dtype=float)
    J = t3.det3(F)
    if np.any(J <= 0.0):
        raise ValueError("deformation gradient must have det F > 0")
    C = t3.transpose(F) @ F
    Cbar = J[..., None, None] ** (-2.0 / 3.0) * C
    return DeformationState(F=F, J=J, C=C, Cbar=Cbar)


def eq_invariants(Cbar):
    """Equilibrium invariants (tr Cbar, tr cof Cbar) of the isochoric tensor."""
    i1 = t3.trace(Cbar)
    i2 = 0.5 * (i1 * i1 - t3.trace(Cbar @ Cbar))
    return i1, i2


def unimodular(Ci):
    """Unimodular part det(Ci)^(-1/3) Ci together with det(Ci)."""
    d = t3.det_ch(Ci)
    return d[..., None, None] ** (-1.0 / 3.0) * Ci, d


def neq_invariants(Cbar, Ci, Cbar_inv=None, Ci_inv=None):
    """Elastic invariants of one Maxwell element.

    Returns ``(I1e, I2e)`` with ``I1e = Cbar : Cibar^-1`` and
    ``I2e = Cbar^-1 : Cibar``.  ``Ci`` need not be unimodular; the
    normalization factor is applied internally.
    """
    if Cbar_inv is None:
        Cbar_inv = t3.inv_spd(Cbar)
    if Ci_inv is None:
        Ci_inv = t3.inv_spd(Ci)
    d = t3.det_ch(Ci)
    i1e = d ** (1.0 / 3.0) * t3.ddot(Cbar, Ci_inv)
    i2e = d ** (-1.0 / 3.0) * t3.ddot(Cbar_inv, Ci)
    return i1e, i2e


def project_force(A, Ci, Ci_inv=None):
    """Projected thermodynamic force Ap = A - (Ci : A)/3 * Ci^-1."""
    if Ci_inv is None:
        Ci_inv = t3.inv_spd(Ci)
    tr_w = t3.ddot(Ci, A)
    return A - (tr_w / 3.0)[..., None, None] * Ci_inv


def diss_invariants(Ap, Cbar):
    """Nine isotropic invariants of (Ap, Cbar) feeding the dual dissipation.

    Order: (tr Ap, tr Ap^2 / 2, tr Ap^4 / 4, tr Cbar, tr Cbar^2 / 2,
    tr(Ap Cbar), tr(Ap^2 Cbar) / 2, tr(Ap Cbar^2), tr(Ap^2 Cbar^2) / 2).
    The cubic force invariant is replaced by a quartic one so every
    force-dependent entry is convex in Ap.
    """
    Ap2 = Ap @ Ap
    Cb2 = Cbar @ Cbar
    out = np.empty(np.broadcast_shapes(Ap.shape[:-2], Cbar.shape[:-2]) + (9,))
    out[..., 0] = t3.trace(Ap)
    out[..., 1] = 0.5 * t3.trace(Ap2)
    out[..., 2] = 0.25 * t3.trace(Ap2 @ Ap2)
    out[..., 3] = t3.trace(Cbar)
    out[..., 4] = 0.5 * t3.trace(Cb2)
    out[..., 5] = t3.ddot(Ap, Cbar)
    out[..., 6] = 0.5 * t3.ddot(Ap2, Cbar)
    out[..., 7] = t3.ddot(Ap, Cb2)
    out[..., 8] = 0.5 * t3.ddot(Ap2, Cb2)
    return out


def diss_invariants_zero_force(Cbar):
    """Invariant tuple at A = 0: only the two Cbar entries survive."""
    shape = Cbar.shape[:-2] + (9,)
    out = np.zeros(shape)
    out[..., 3] = t3.trace(Cbar)
    out[..., 4] = 0.5 * t3.trace(Cbar @ Cbar)
    return out


# Indices of the dissipation invariants that are linear in Ap.
DISS_LINEAR_IDX = (0, 5, 7)
# Indices whose first derivatives at the undeformed state set the viscosity.
DISS_QUADRATIC_IDX = (1, 6, 8)


def diss_grad_Ap_basis(Ap, Cbar):
    """Gradients B_g = d I_g / d Ap of the nine invariants, stacked on axis -3.

    Entries 4 and 5 (the pure Cbar invariants) are zero.
    """
    Ap2 = Ap @ Ap
    Cb2 = Cbar @ Cbar
    shape = np.broadcast_shapes(Ap.shape[:-2], Cbar.shape[:-2])
    b = np.zeros(shape + (9, 3, 3))
    b[..., 0, :, :] = t3.I3
    b[..., 1, :, :] = Ap
    b[..., 2, :, :] = Ap2 @ Ap
    b[..., 5, :, :] = np.broadcast_to(Cbar, shape + (3, 3))
    b[..., 6, :, :] = 0.5 * (Ap @ Cbar + Cbar @ Ap)
    b[..., 7, :, :] = np.broadcast_to(Cb2, shape + (3, 3))
    b[..., 8, :, :] = 0.5 * (Ap @ Cb2 + Cb2 @ Ap)
    return b


def project_force_pullback(W, Ci, Ci_inv=None):
    """Pull a gradient with respect to Ap back to a gradient with respect to A.

    For the linear map Ap(A) at fixed Ci, the transpose acts as
    W -> W - (W : Ci^-1)/3 * Ci.
    """
    if Ci_inv is None:
        Ci_inv = t3.inv_spd(Ci)
    return W - (t3.ddot(W, Ci_inv) / 3.0)[..., None, None] * Ci


def diss_grad_A(Ap, Ci, Cbar, Ci_inv=None):
    """Gradients d I_g / d A of the nine invariants, stacked on axis -3."""
    b = diss_grad_Ap_basis(Ap, Cbar)
    if Ci_inv is None:
        Ci_inv = t3.inv_spd(Ci)
    return project_force_pullback(b, Ci[..., None, :, :], Ci_inv[..., None, :, :])


def flory_pullback(T, C, C_inv=None, detC=None):
    """Chain a gradient through the isochoric map Cbar = det(C)^(-1/3) C.

    Given T = d f / d Cbar, returns d f / d C.
    """
    if C_inv is None:
        C_inv = t3.inv_spd(C)
    if detC is None:
        detC = t3.det_ch(C)
    s = t3.ddot(T, C)
    return detC[..., None, None] ** (-1.0 / 3.0) * (
        T - (s / 3.0)[..., None, None] * C_inv
    )


def eq_invariant_gradients(C, C_inv=None, detC=None):
    """d(I1bar)/dC and d(I2bar)/dC through the Flory split."""
    if C_inv is None:
        C_inv = t3.inv_spd(C)
    if detC is None:
        detC = t3.det_ch(C)
    Cbar = detC[..., None, None] ** (-1.0 / 3.0) * C
    i1 = t3.trace(Cbar)
    g1 = flory_pullback(np.broadcast_to(t3.I3, Cbar.shape), C, C_inv, detC)
    g2 = flory_pullback(i1[..., None, None] * t3.I3 - Cbar, C, C_inv, detC)
    return g1, g2


def neq_invariant_gradients_Ci(Cbar, Ci, Ci_inv=None, Cbar_inv=None):
    """d(I1e)/dCi and d(I2e)/dCi, including the unimodular normalization."""
    if Ci_inv is None:
        Ci_inv = t3.inv_spd(Ci)
    d = t3.det_ch(Ci)
    d13 = d[..., None, None] ** (1.0 / 3.0)
    s1 = t3.ddot(Cbar, Ci_inv)
    g1 = d13 * ((s1 / 3.0)[..., None, None] * Ci_inv - Ci_inv @ Cbar @ Ci_inv)
    if Cbar_inv is None:
        Cbar_inv = t3.inv_spd(Cbar)
    s2 = t3.ddot(Cbar_inv, Ci)
    g2 = (Cbar_inv - (s2 / 3.0)[..., None, None] * Ci_inv) / d13
    return g1, g2


def neq_invariant_gradients_C(C, Ci, C_inv=None, detC=None, Ci_inv=None):
    """d(I1e)/dC and d(I2e)/dC through the Flory split of C."""
    if C_inv is None:
        C_inv = t3.inv_spd(C)
    if detC is None:
        detC = t3.det_ch(C)
    if Ci_inv is None:
        Ci_inv = t3.inv_spd(Ci)
    Cbar = detC[..., None, None] ** (-1.0 / 3.0) * C
    Cibar, _ = unimodular(Ci)
    Cibar_inv, _ = unimodular(Ci_inv)
    g1 = flory_pullback(Cibar_inv, C, C_inv, detC)
    Cbar_inv = t3.inv_spd(Cbar)
    g2 = flory_pullback(-Cbar_inv @ Cibar @ Cbar_inv, C, C_inv, detC)
    return g1, g2


def diss_invariant_gradients_C(Ap, C, C_inv=None, detC=None):
    """d I_g / d C of the nine dissipation invariants (through Cbar)."""
    if C_inv is None:
        C_inv = t3.inv_spd(C)
    if detC is None:
        detC = t3.det_ch(C)
    Cbar = detC[..., None, None] ** (-1.0 / 3.0) * C
    Ap2 = Ap @ Ap
    shape = np.broadcast_shapes(Ap.shape[:-2], C.shape[:-2])
    tbar = np.zeros(shape + (9, 3, 3))
    tbar[..., 3, :, :] = t3.I3
    tbar[..., 4, :, :] = np.broadcast_to(Cbar, shape + (3, 3))
    tbar[..., 5, :, :] = np.broadcast_to(Ap, shape + (3, 3))
    tbar[..., 6, :, :] = 0.5 * np.broadcast_to(Ap2, shape + (3, 3))
    tbar[..., 7, :, :] = Ap @ Cbar + Cbar @ Ap
    tbar[..., 8, :, :] = 0.5 * (Ap2 @ Cbar + Cbar @ Ap2)
    return flory_pullback(tbar, C[..., None, :, :], C_inv[..., None, :, :],
                          detC[..., None])


def diss_invariant_gradients_Ci(A, Ci, Cbar, Ci_inv=None):
    """d I_g / d Ci at fixed A (through the projection Ap(A, Ci))."""
    if Ci_inv is None:
        Ci_inv = t3.inv_spd(Ci)
    Ap = project_force(A, Ci, Ci_inv)
    b = diss_grad_Ap_basis(Ap, Cbar)
    tr_w = t3.ddot(Ci, A)
    # dAp = -(dCi : A) Ci^-1 / 3 + (Ci : A) Ci^-1 dCi Ci^-1 / 3
    bn = t3.ddot(b, Ci_inv[..., None, :, :])
    term1 = -(bn[..., None, None] / 3.0) * A[..., None, :, :]
    inner = Ci_inv[..., None, :, :] @ b @ Ci_inv[..., None, :, :]
    term2 = (tr_w[..., None, None, None] / 3.0) * inner
    return term1 + term2


def rotate(Q, a):
    """Orthogonal conjugation Q a Q^T."""
    return Q @ a @ t3.transpose(Q)
