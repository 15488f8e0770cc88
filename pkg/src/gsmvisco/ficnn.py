"""Monotonic fully input-convex networks, gate layers, and the neural model.

Architecture per network: hidden layers with softplus activation, non-negative
hidden-to-hidden weights, non-negative input weights in the first hidden layer
and non-negative output/skip weights.  Softplus is smooth and convex
non-decreasing, so the scalar output is convex and non-decreasing in every
input coordinate for any parameter values inside the constraint set.  Second
derivatives exist everywhere, which the Newton tangent of the time integrator
relies on.

Networks for the N Maxwell elements share one architecture, so their
parameters are stored stacked along a leading element axis and evaluated with
batched einsums.  Inputs carry the element axis second to last, e.g.
``x`` of shape (..., N, n_in).

A trainable gate in [0, 1] multiplies each non-equilibrium potential; gates
shared between the energy and dissipation networks of an element let sparse
regularization switch whole Maxwell elements off.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import kinematics as kin
from . import tensor3 as t3

GATE_GAMMA = 1.025
GATE_EPS = 2.5

#: Invariant values of the energy inputs at the undeformed state.
ENERGY_REF = np.array([3.0, 3.0])


def softplus(z):
    return np.logaddexp(0.0, z)


def softplus_d1(z):
    return expit(z)


def softplus_d2(z):
    s = expit(z)
    return s * (1.0 - s)


def gate_value(theta, gamma=GATE_GAMMA, eps=GATE_EPS):
    """Gate g = min(1, gamma tanh(eps theta)), clipped into [0, 1]."""
    return np.minimum(1.0, gamma * np.tanh(eps * np.asarray(theta, dtype=float)))


def gate_derivative(theta, gamma=GATE_GAMMA, eps=GATE_EPS):
    """dg/dtheta; zero in the clipped region."""
    theta = np.asarray(theta, dtype=float)
    th = np.tanh(eps * theta)
    raw = gamma * eps * (1.0 - th * th)
    return np.where(gamma * th < 1.0, raw, 0.0)


@dataclass
class FicnnStack:
    """N structurally identical networks with stacked parameters.

    ``wx[k]``: (N, m_k, n_in) input injections, ``wz[k]``: (N, m_k, m_{k-1})
    hidden-to-hidden weights (``wz[0]`` is None), ``b[k]``: (N, m_k) biases,
    ``w_out``: (N, m_L), ``skip``: (N, n_in), ``b_out``: (N,).
    """

    wx: list
    wz: list
    b: list
    w_out: np.ndarray
    skip: np.ndarray
    b_out: np.ndarray

    @classmethod
    def initialize(cls, n_in, widths, n_stack, rng):
        """Uniform positive initialization scaled by fan-in; zero biases."""
        wx, wz, b = [], [], []
        prev = None
        for k, m in enumerate(widths):
            wx.append(rng.uniform(0.0, 1.0 / n_in, size=(n_stack, m, n_in)))
            wz.append(
                None
                if k == 0
                else rng.uniform(0.0, 1.0 / prev, size=(n_stack, m, prev))
            )
            b.append(np.zeros((n_stack, m)))
            prev = m
        return cls(
            wx=wx,
            wz=wz,
            b=b,
            w_out=rng.uniform(0.0, 1.0 / prev, size=(n_stack, prev)),
            skip=rng.uniform(0.0, 1.0 / n_in, size=(n_stack, n_in)),
            b_out=np.zeros(n_stack),
        )

    @property
    def n_stack(self):
        return self.w_out.shape[0]

    @property
    def n_in(self):
        return self.skip.shape[1]

    @property
    def widths(self):
        return [wxk.shape[1] for wxk in self.wx]

    @property
    def n_layers(self):
        return len(self.wx)

    # -- forward passes ----------------------------------------------------

    def _preacts(self, x):
        """Pre-activations a_k and activations h_k of every hidden layer."""
        a_list, h_list = [], []
        h = None
        for k in range(self.n_layers):
            a = np.einsum("Nhn,...Nn->...Nh", self.wx[k], x) + self.b[k]
            if k > 0:
                a = a + np.einsum("Nhm,...Nm->...Nh", self.wz[k], h)
            h = softplus(a)
            a_list.append(a)
            h_list.append(h)
        return a_list, h_list

    def value(self, x):
        """Scalar outputs, shape (..., N) for input (..., N, n_in)."""
        _, h_list = self._preacts(x)
        return (
            np.einsum("Nh,...Nh->...N", self.w_out, h_list[-1])
            + np.einsum("Nn,...Nn->...N", self.skip, x)
            + self.b_out
        )

    def grad(self, x):
        """Input gradients, shape (..., N, n_in); non-negative by construction."""
        a_list, _ = self._preacts(x)
        jac = softplus_d1(a_list[0])[..., None] * self.wx[0]
        for k in range(1, self.n_layers):
            inner = np.einsum("Nhm,...Nmn->...Nhn", self.wz[k], jac) + self.wx[k]
            jac = softplus_d1(a_list[k])[..., None] * inner
        return np.einsum("Nh,...Nhn->...Nn", self.w_out, jac) + self.skip

    def value_and_grad(self, x):
        a_list, h_list = self._preacts(x)
        val = (
            np.einsum("Nh,...Nh->...N", self.w_out, h_list[-1])
            + np.einsum("Nn,...Nn->...N", self.skip, x)
            + self.b_out
        )
        jac = softplus_d1(a_list[0])[..., None] * self.wx[0]
        for k in range(1, self.n_layers):
            inner = np.einsum("Nhm,...Nmn->...Nhn", self.wz[k], jac) + self.wx[k]
            jac = softplus_d1(a_list[k])[..., None] * inner
        grad = np.einsum("Nh,...Nhn->...Nn", self.w_out, jac) + self.skip
        return val, grad

    def hessian(self, x):
        """Input Hessians, shape (..., N, n_in, n_in)."""
        a_list, _ = self._preacts(x)
        da = np.broadcast_to(
            self.wx[0], a_list[0].shape + (self.n_in,)
        )  # d a_k / d x
        jac = softplus_d1(a_list[0])[..., None] * self.wx[0]
        hess = softplus_d2(a_list[0])[..., None, None] * np.einsum(
            "...hi,...hj->...hij", da, da
        )
        for k in range(1, self.n_layers):
            da = np.einsum("Nhm,...Nmn->...Nhn", self.wz[k], jac) + self.wx[k]
            prop = np.einsum("Nhm,...Nmij->...Nhij", self.wz[k], hess)
            hess = softplus_d2(a_list[k])[..., None, None] * np.einsum(
                "...hi,...hj->...hij", da, da
            ) + softplus_d1(a_list[k])[..., None, None] * prop
            jac = softplus_d1(a_list[k])[..., None] * da
        return np.einsum("Nh,...Nhij->...Nij", self.w_out, hess)

    # -- reverse mode for training -----------------------------------------

    def vjp_param_grad(self, x, seed):
        """Parameter gradient of the scalar sum_b seed_b . grad(x_b).

        ``x`` and ``seed`` have shape (..., N, n_in); leading axes are summed
        over.  Returns a :class:`FicnnStack`-shaped structure of accumulated
        parameter derivatives (double backprop through the directional
        derivative of the output).
        """
        x = np.asarray(x)
        seed = np.broadcast_to(np.asarray(seed), x.shape)
        lead = x.shape[:-2]
        B = int(np.prod(lead)) if lead else 1
        x = np.ascontiguousarray(x).reshape(B, self.n_stack, self.n_in)
        s = np.ascontiguousarray(seed).reshape(B, self.n_stack, self.n_in)

        # Forward: activations and the directional (tangent) chain.
        a_list, h_list, u_list, t_list = [], [], [], []
        h = t = None
        for k in range(self.n_layers):
            a = np.einsum("Nhn,bNn->bNh", self.wx[k], x) + self.b[k]
            u = np.einsum("Nhn,bNn->bNh", self.wx[k], s)
            if k > 0:
                a = a + np.einsum("Nhm,bNm->bNh", self.wz[k], h)
                u = u + np.einsum("Nhm,bNm->bNh", self.wz[k], t)
            h = softplus(a)
            t = softplus_d1(a) * u
            a_list.append(a)
            h_list.append(h)
            u_list.append(u)
            t_list.append(t)

        g = _zero_grads(self)
        g.w_out += np.einsum("bNh->Nh", t_list[-1])
        g.skip += np.einsum("bNn->Nn", s)

        # Reverse: dt flows through the tangent chain, dh through the
        # activation chain (it only receives contributions from layer k+1).
        dt = np.broadcast_to(self.w_out, t_list[-1].shape)
        dh = np.zeros_like(dt)
        for k in range(self.n_layers - 1, -1, -1):
            sp1 = softplus_d1(a_list[k])
            sp2 = softplus_d2(a_list[k])
            du = dt * sp1
            da = dt * sp2 * u_list[k] + dh * sp1
            g.wx[k] += np.einsum("bNh,bNn->Nhn", du, s) + np.einsum(
                "bNh,bNn->Nhn", da, x
            )
            g.b[k] += np.einsum("bNh->Nh", da)
            if k > 0:
                g.wz[k] += np.einsum("bNh,bNm->Nhm", du, t_list[k - 1]) + np.einsum(
                    "bNh,bNm->Nhm", da, h_list[k - 1]
                )
                dt = np.einsum("Nhm,bNh->bNm", self.wz[k], du)
                dh = np.einsum("Nhm,bNh->bNm", self.wz[k], da)
        return g

    # -- parameter vector interface ------------------------------------------

    def arrays(self):
        """Parameter arrays in flattening order, with constraint flags."""
        out = []
        for k in range(self.n_layers):
            # Input weights of the first hidden layer are sign-constrained
            # (monotonicity); deeper input injections are not.
            out.append((self.wx[k], k == 0))
            if k > 0:
                out.append((self.wz[k], True))
            out.append((self.b[k], False))
        out.append((self.w_out, True))
        out.append((self.skip, True))
        out.append((self.b_out, False))
        return out

    @property
    def n_params(self):
        return sum(a.size for a, _ in self.arrays())

    def get_flat(self):
        return np.concatenate([a.ravel() for a, _ in self.arrays()])

    def set_flat(self, vec):
        pos = 0
        for a, _ in self.arrays():
            a[...] = vec[pos : pos + a.size].reshape(a.shape)
            pos += a.size
        return pos

    def lower_bounds(self):
        return np.concatenate(
            [
                np.full(a.size, 0.0 if constrained else -np.inf)
                for a, constrained in self.arrays()
            ]
        )

    def scale_output(self, factor):
        """Scale output and skip weights; the stated linear handle on the
        initial moduli/viscosities."""
        factor = np.asarray(factor, dtype=float)
        self.w_out *= factor[..., None]
        self.skip *= factor[..., None]

    def to_payload(self):
        return {
            "n_in": self.n_in,
            "widths": self.widths,
            "wx": [w.tolist() for w in self.wx],
            "wz": [None if w is None else w.tolist() for w in self.wz],
            "b": [w.tolist() for w in self.b],
            "w_out": self.w_out.tolist(),
            "skip": self.skip.tolist(),
            "b_out": self.b_out.tolist(),
        }

    @classmethod
    def from_payload(cls, payload):
        return cls(
            wx=[np.asarray(w, dtype=float) for w in payload["wx"]],
            wz=[
                None if w is None else np.asarray(w, dtype=float)
                for w in payload["wz"]
            ],
            b=[np.asarray(w, dtype=float) for w in payload["b"]],
            w_out=np.asarray(payload["w_out"], dtype=float),
            skip=np.asarray(payload["skip"], dtype=float),
            b_out=np.asarray(payload["b_out"], dtype=float),
        )


def _zero_grads(stack: FicnnStack) -> FicnnStack:
    return FicnnStack(
        wx=[np.zeros_like(w) for w in stack.wx],
        wz=[None if w is None else np.zeros_like(w) for w in stack.wz],
        b=[np.zeros_like(w) for w in stack.b],
        w_out=np.zeros_like(stack.w_out),
        skip=np.zeros_like(stack.skip),
        b_out=np.zeros_like(stack.b_out),
    )


class NeuralMaterial:
    """Trainable constitutive model: convex network potentials plus gates.

    Implements the potential-hook contract consumed by ``material`` and
    ``integrator``: all three potentials are normalized by correction terms so
    that energies vanish in the undeformed state and the dual dissipation
    potential has zero value and zero force-gradient at zero force.
    """

    def __init__(self, eq_net, neq_net, phi_net, theta_gate,
                 gamma=GATE_GAMMA, eps=GATE_EPS):
        self.eq_net = eq_net
        self.neq_net = neq_net
        self.phi_net = phi_net
        self.theta_gate = np.asarray(theta_gate, dtype=float)
        self.gamma = gamma
        self.eps = eps

    @classmethod
    def initialize(cls, n_elements=5, eq_hidden=(8,), neq_hidden=(8,),
                   phi_hidden=(16,), seed=0, theta_gate0=0.5,
                   gamma=GATE_GAMMA, eps=GATE_EPS):
        """Random feasible model; gates start in the responsive region."""
        rng = np.random.Generator(np.random.PCG64(seed))
        return cls(
            eq_net=FicnnStack.initialize(2, list(eq_hidden), 1, rng),
            neq_net=FicnnStack.initialize(2, list(neq_hidden), n_elements, rng),
            phi_net=FicnnStack.initialize(9, list(phi_hidden), n_elements, rng),
            theta_gate=np.full(n_elements, float(theta_gate0)),
            gamma=gamma,
            eps=eps,
        )

    @property
    def n_elements(self):
        return self.theta_gate.size

    def gates(self):
        return gate_value(self.theta_gate, self.gamma, self.eps)

    def gate_derivatives(self):
        return gate_derivative(self.theta_gate, self.gamma, self.eps)

    def active_mask(self):
        return self.gates() > 0.0

    # -- potential hooks -----------------------------------------------------

    def eq_value(self, ieq):
        x = ieq[..., None, :]
        ref = np.broadcast_to(ENERGY_REF, x.shape[-2:])
        return self.eq_net.value(x)[..., 0] - self.eq_net.value(ref)[..., 0]

    def eq_derivs(self, ieq):
        return self.eq_net.grad(ieq[..., None, :])[..., 0, :]

    def neq_value(self, ineq):
        ref = np.broadcast_to(ENERGY_REF, ineq.shape[-2:])
        raw = self.neq_net.value(ineq) - self.neq_net.value(ref)
        return self.gates() * raw

    def neq_derivs(self, ineq):
        return self.gates()[:, None] * self.neq_net.grad(ineq)

    def _diss_inputs(self, Ap, Cbar):
        iphi = kin.diss_invariants(Ap, Cbar[..., None, :, :])
        i0 = kin.diss_invariants_zero_force(Cbar)[..., None, :]
        i0 = np.broadcast_to(i0, iphi.shape)
        return iphi, i0

    def diss_reference(self, Cbar):
        """Zero-force correction data for one deformation (reusable cache).

        The correction point depends only on Cbar, so its network gradient is
        the same for every Newton iterate and tangent column of a step.
        """
        i0 = kin.diss_invariants_zero_force(Cbar)[..., None, :]
        i0 = np.broadcast_to(i0, i0.shape[:-2] + (self.n_elements, 9))
        return {"i0": i0, "grad0": self.phi_net.grad(i0)}

    def diss_value(self, Ap, Cis, Cbar):
        iphi, i0 = self._diss_inputs(Ap, Cbar)
        v0, g0 = self.phi_net.value_and_grad(i0)
        raw = self.phi_net.value(iphi) - v0
        for idx in kin.DISS_LINEAR_IDX:
            raw = raw - g0[..., idx] * iphi[..., idx]
        return self.gates() * raw

    def diss_coeffs(self, iphi, i0, grad0=None):
        """Effective derivatives of the corrected potential w.r.t. the
        invariants; the linear-invariant columns are shifted by their value at
        zero force so the force-gradient vanishes there."""
        c = self.phi_net.grad(iphi).copy()
        if grad0 is None:
            grad0 = self.phi_net.grad(i0)
        for idx in kin.DISS_LINEAR_IDX:
            c[..., idx] = c[..., idx] - grad0[..., idx]
        return self.gates()[:, None] * c

    def diss_grad_Ap(self, Ap, Cis, Cbar, diss_ref=None):
        if diss_ref is None:
            iphi, i0 = self._diss_inputs(Ap, Cbar)
            c = self.diss_coeffs(iphi, i0)
        else:
            iphi = kin.diss_invariants(Ap, Cbar[..., None, :, :])
            c = self.diss_coeffs(iphi, None, grad0=diss_ref["grad0"])
        basis = kin.diss_grad_Ap_basis(Ap, Cbar[..., None, :, :])
        return np.einsum("...g,...gij->...ij", c, basis)

    # -- linearization -------------------------------------------------------

    def initial_linear_params(self):
        from .material import LinearParams

        g = self.gates()
        mu = 2.0 * float(np.sum(self.eq_derivs(ENERGY_REF)))
        ref = np.broadcast_to(ENERGY_REF, (self.n_elements, 2))
        mus = 2.0 * np.sum(self.neq_derivs(ref), axis=-1)
        iref = kin.diss_invariants_zero_force(t3.I3)
        iref = np.broadcast_to(iref, (self.n_elements, 9))
        gphi = self.phi_net.grad(iref)
        inv_eta = 2.0 * g * np.sum(
            gphi[..., list(kin.DISS_QUADRATIC_IDX)], axis=-1
        )
        with np.errstate(divide="ignore"):
            etas = np.where(inv_eta > 0.0, 1.0 / np.maximum(inv_eta, 1e-300), np.inf)
        return LinearParams(mu=mu, mus=mus, etas=etas)

    # -- parameter vector ------------------------------------------------------

    @property
    def n_params(self):
        return (
            self.eq_net.n_params
            + self.neq_net.n_params
            + self.phi_net.n_params
            + self.n_elements
        )

    def get_flat(self):
        return np.concatenate(
            [
                self.eq_net.get_flat(),
                self.neq_net.get_flat(),
                self.phi_net.get_flat(),
                self.theta_gate,
            ]
        )

    def set_flat(self, vec):
        pos = 0
        for net in (self.eq_net, self.neq_net, self.phi_net):
            n = net.n_params
            net.set_flat(vec[pos : pos + n])
            pos += n
        self.theta_gate[...] = vec[pos : pos + self.n_elements]

    def bounds(self):
        """(lower, upper) box constraints of the feasible set."""
        lo = np.concatenate(
            [
                self.eq_net.lower_bounds(),
                self.neq_net.lower_bounds(),
                self.phi_net.lower_bounds(),
                np.zeros(self.n_elements),
            ]
        )
        hi = np.full(lo.size, np.inf)
        hi[-self.n_elements :] = 1.0
        return lo, hi

    def clip_feasible(self):
        """Project the parameters onto the feasible set (clamp at the bounds)."""
        lo, hi = self.bounds()
        self.set_flat(np.clip(self.get_flat(), lo, hi))

    def copy(self):
        clone = NeuralMaterial.initialize(
            n_elements=self.n_elements,
            eq_hidden=self.eq_net.widths,
            neq_hidden=self.neq_net.widths,
            phi_hidden=self.phi_net.widths,
            gamma=self.gamma,
            eps=self.eps,
        )
        clone.set_flat(self.get_flat())
        return clone

    # -- serialization -------------------------------------------------------

    def to_json(self, path):
        payload = {
            "schema": "gsmvisco-model/1",
            "kind": "neural",
            "n_elements": self.n_elements,
            "gate": {
                "gamma": self.gamma,
                "eps": self.eps,
                "theta": self.theta_gate.tolist(),
            },
            "networks": {
                "eq": self.eq_net.to_payload(),
                "neq": self.neq_net.to_payload(),
                "phi": self.phi_net.to_payload(),
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("schema") != "gsmvisco-model/1":
            raise ValueError("unrecognized model file schema")
        return cls(
            eq_net=FicnnStack.from_payload(payload["networks"]["eq"]),
            neq_net=FicnnStack.from_payload(payload["networks"]["neq"]),
            phi_net=FicnnStack.from_payload(payload["networks"]["phi"]),
            theta_gate=np.asarray(payload["gate"]["theta"], dtype=float),
            gamma=float(payload["gate"]["gamma"]),
            eps=float(payload["gate"]["eps"]),
        )
