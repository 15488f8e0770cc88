"""Fixed-size 3x3 tensor algebra.

All functions operate on arrays whose last two axes are the 3x3 tensor axes,
so any number of leading batch axes is allowed.  Symmetric tensors may also be
packed into Kelvin-Mandel 6-vectors (off-diagonal components scaled by
sqrt(2)), which makes packing a linear isometry: the Frobenius norm of the
tensor equals the Euclidean norm of the vector, and a minor-symmetric
fourth-order tensor packs into a 6x6 matrix whose matrix-vector product
realizes the double contraction.

Component order of the Kelvin vector: (11, 22, 33, 12, 13, 23).
"""

from __future__ import annotations

import numpy as np

I3 = np.eye(3)

#: Smallest Cholesky pivot (squared) accepted before an inversion; below this
#: the input is treated as numerically indefinite and rejected.
SPD_PIVOT_TOL = 1e-12

_SQRT2 = np.sqrt(2.0)
_KELVIN_WEIGHTS = np.array([1.0, 1.0, 1.0, _SQRT2, _SQRT2, _SQRT2])
_KELVIN_IDX = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]


class SPDError(ValueError):
    """Raised when an operation requires a symmetric positive definite input.

    Callers in the Newton / optimizer layers treat this as a rejected step.
    """


def trace(a):
    return np.trace(a, axis1=-2, axis2=-1)


def transpose(a):
    return np.swapaxes(a, -2, -1)


def sym(a):
    return 0.5 * (a + transpose(a))


def dev(a):
    """Deviatoric part a - tr(a)/3 * I."""
    return a - (trace(a) / 3.0)[..., None, None] * I3


def ddot(a, b):
    """Double contraction a : b = a_ij b_ij."""
    return np.einsum("...ij,...ij->...", a, b)


def norm(a):
    """Frobenius norm over the trailing 3x3 axes."""
    return np.sqrt(ddot(a, a))


def det3(a):
    """Determinant by cofactor expansion (reference implementation)."""
    return (
        a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
        - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
        + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
    )


def det_ch(a):
    """Determinant via the Cayley-Hamilton identity.

    det A = (tr A^3 - I1 tr A^2 + I2 tr A) / 3 with I1 = tr A and
    I2 = (I1^2 - tr A^2) / 2.  Uses only matrix powers and traces, which keeps
    it smooth in the entries (no pivoting, no inverse).
    """
    a2 = a @ a
    t1 = trace(a)
    t2 = trace(a2)
    t3 = trace(a2 @ a)
    i2 = 0.5 * (t1 * t1 - t2)
    return (t3 - t1 * t2 + i2 * t1) / 3.0


def cof(a):
    """Cofactor matrix, cof(A)_ij = d det(A) / d A_ij.  No inverse is formed."""
    c = np.empty_like(a)
    c[..., 0, 0] = a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1]
    c[..., 0, 1] = a[..., 1, 2] * a[..., 2, 0] - a[..., 1, 0] * a[..., 2, 2]
    c[..., 0, 2] = a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]
    c[..., 1, 0] = a[..., 0, 2] * a[..., 2, 1] - a[..., 0, 1] * a[..., 2, 2]
    c[..., 1, 1] = a[..., 0, 0] * a[..., 2, 2] - a[..., 0, 2] * a[..., 2, 0]
    c[..., 1, 2] = a[..., 0, 1] * a[..., 2, 0] - a[..., 0, 0] * a[..., 2, 1]
    c[..., 2, 0] = a[..., 0, 1] * a[..., 1, 2] - a[..., 0, 2] * a[..., 1, 1]
    c[..., 2, 1] = a[..., 0, 2] * a[..., 1, 0] - a[..., 0, 0] * a[..., 1, 2]
    c[..., 2, 2] = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    return c


def _cholesky(s):
    """Batched lower Cholesky factor; SPDError on failure or tiny pivots."""
    try:
        ell = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise SPDError("matrix is not symmetric positive definite") from exc
    piv = np.einsum("...ii->...i", ell)
    scale = np.maximum(1.0, np.max(np.abs(s), axis=(-2, -1)))
    if np.any(piv * piv <= SPD_PIVOT_TOL * scale[..., None]):
        raise SPDError("matrix is numerically indefinite (tiny Cholesky pivot)")
    return ell


def inv_spd(s):
    """Inverse of a symmetric positive definite matrix via Cholesky.

    The lower factor L is inverted in closed form (3x3 triangular) and the
    inverse assembled as L^-T L^-1, so the result is symmetric by
    construction.  Raises :class:`SPDError` on indefinite input, which the
    Newton / optimizer layers interpret as a step to reject.
    """
    ell = _cholesky(s)
    l11 = ell[..., 0, 0]
    l21 = ell[..., 1, 0]
    l22 = ell[..., 1, 1]
    l31 = ell[..., 2, 0]
    l32 = ell[..., 2, 1]
    l33 = ell[..., 2, 2]
    m = np.zeros_like(s)
    m[..., 0, 0] = 1.0 / l11
    m[..., 1, 0] = -l21 / (l11 * l22)
    m[..., 1, 1] = 1.0 / l22
    m[..., 2, 0] = (l21 * l32 - l22 * l31) / (l11 * l22 * l33)
    m[..., 2, 1] = -l32 / (l22 * l33)
    m[..., 2, 2] = 1.0 / l33
    return transpose(m) @ m


def eigh_sym(s):
    """Eigendecomposition of a symmetric matrix (ascending eigenvalues).

    Eigensolver failures (non-finite entries from diverged states) surface as
    :class:`SPDError` so the Newton / optimizer layers reject the step.
    """
    try:
        return np.linalg.eigh(sym(s))
    except np.linalg.LinAlgError as exc:
        raise SPDError(f"eigensolver did not converge: {exc}") from exc


def expm_sym(s):
    """Matrix exponential of a symmetric matrix via eigendecomposition.

    The spectral reconstruction is symmetrized, so the output is exactly
    symmetric (floating-point addition commutes).
    """
    w, q = eigh_sym(s)
    e = np.exp(w)
    return sym(np.einsum("...ik,...k,...jk->...ij", q, e, q))


def sqrtm_spd(s):
    """Principal square root of an SPD matrix via eigendecomposition."""
    w, q = eigh_sym(s)
    if np.any(w <= 0.0):
        raise SPDError("square root requires positive eigenvalues")
    r = np.sqrt(w)
    return sym(np.einsum("...ik,...k,...jk->...ij", q, r, q))


def sqrtm_spd_pair(s):
    """Square root and inverse square root of an SPD matrix in one pass."""
    w, q = eigh_sym(s)
    if np.any(w <= 0.0):
        raise SPDError("square root requires positive eigenvalues")
    r = np.sqrt(w)
    root = sym(np.einsum("...ik,...k,...jk->...ij", q, r, q))
    inv_root = sym(np.einsum("...ik,...k,...jk->...ij", q, 1.0 / r, q))
    return root, inv_root


# Pade [6/6] coefficients of exp(x).
_PADE6 = (1.0, 0.5, 5.0 / 44.0, 1.0 / 66.0, 1.0 / 792.0, 1.0 / 15840.0, 1.0 / 665280.0)


def expm(h):
    """Matrix exponential of a general 3x3 matrix.

    Degree-6 Pade approximant with scaling and squaring; the argument is
    scaled until its Frobenius norm is below 1/2, which at this size gives
    results accurate to round-off.
    """
    h = np.asarray(h, dtype=float)
    nrm = np.max(norm(h))
    n_sq = 0
    if nrm > 0.5 and np.isfinite(nrm):
        n_sq = max(0, int(np.ceil(np.log2(nrm / 0.5))))
        h = h / (2.0**n_sq)
    b = _PADE6
    h2 = h @ h
    h4 = h2 @ h2
    h6 = h4 @ h2
    u = h @ (b[1] * I3 + b[3] * h2 + b[5] * h4)
    v = b[0] * I3 + b[2] * h2 + b[4] * h4 + b[6] * h6
    f = np.linalg.solve(v - u, v + u)
    for _ in range(n_sq):
        f = f @ f
    return f


def dexpm_sym_apply(s, w):
    """Frechet derivative of ``expm_sym`` at ``s``, applied to symmetric ``w``.

    Uses the spectral divided-difference representation.  The map is
    self-adjoint in the Frobenius inner product, so the same function serves
    as the reverse-mode pullback.
    """
    lam, q = eigh_sym(s)
    # Divided differences (exp(li) - exp(lj)) / (li - lj), series for li ~ lj.
    d = lam[..., :, None] - lam[..., None, :]
    mean = 0.5 * (lam[..., :, None] + lam[..., None, :])
    u = 0.5 * d
    small = np.abs(d) < 1e-6
    u_safe = np.where(small, 1.0, u)
    phi = np.exp(mean) * np.where(small, 1.0 + u * u / 6.0, np.sinh(u_safe) / u_safe)
    wq = transpose(q) @ w @ q
    return q @ (phi * wq) @ transpose(q)


def pack_kelvin(s):
    """Pack a symmetric tensor into its Kelvin 6-vector."""
    comps = np.stack([s[..., i, j] for i, j in _KELVIN_IDX], axis=-1)
    return comps * _KELVIN_WEIGHTS


def unpack_kelvin(v):
    """Inverse of :func:`pack_kelvin` (round trips to within one ulp)."""
    c = v / _KELVIN_WEIGHTS
    out = np.empty(v.shape[:-1] + (3, 3), dtype=v.dtype)
    for a, (i, j) in enumerate(_KELVIN_IDX):
        out[..., i, j] = c[..., a]
        out[..., j, i] = c[..., a]
    return out


def pack_kelvin4(k):
    """Pack a minor-symmetric fourth-order tensor into its Kelvin 6x6 matrix.

    The packed matrix satisfies pack(K : S) = pack4(K) @ pack(S).
    """
    m = np.empty(k.shape[:-4] + (6, 6), dtype=k.dtype)
    for a, (i, j) in enumerate(_KELVIN_IDX):
        for b, (p, q) in enumerate(_KELVIN_IDX):
            m[..., a, b] = _KELVIN_WEIGHTS[a] * _KELVIN_WEIGHTS[b] * k[..., i, j, p, q]
    return m


def kelvin_basis():
    """The six symmetric basis tensors dual to the Kelvin components."""
    return unpack_kelvin(np.eye(6))
