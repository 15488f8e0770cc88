import numpy as np
import pytest

from gsmvisco import kinematics as kin
from gsmvisco import tensor3 as t3

from helpers import (
    assert_close_rel,
    fd_grad_sym,
    make_rng,
    rand_rot,
    rand_spd,
    rand_sym,
    rand_unimodular_spd,
)


def test_isochoric_split_identity_and_dilation():
    st = kin.isochoric_split(np.eye(3))
    assert st.J == pytest.approx(1.0)
    np.testing.assert_allclose(st.Cbar, np.eye(3), atol=1e-15)

    st = kin.isochoric_split(2.0 * np.eye(3))
    assert st.J == pytest.approx(8.0)
    np.testing.assert_allclose(st.Cbar, np.eye(3), atol=1e-14)


def test_isochoric_split_hand_case():
    st = kin.isochoric_split(np.diag([2.0, 2.0**-0.5, 2.0**-0.5]))
    assert st.J == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(st.Cbar, np.diag([4.0, 0.5, 0.5]), rtol=1e-14)


def test_isochoric_split_unimodular_for_random_F():
    rng = make_rng(0)
    for _ in range(100):
        f = np.eye(3) + 0.5 * rng.normal(size=(3, 3))
        if t3.det3(f) <= 0.05:
            continue
        st = kin.isochoric_split(f)
        assert abs(t3.det3(st.Cbar) - 1.0) < 1e-12


def test_isochoric_split_rejects_inverted():
    with pytest.raises(ValueError):
        kin.isochoric_split(-np.eye(3))


def test_eq_invariants():
    i1, i2 = kin.eq_invariants(np.eye(3))
    assert (i1, i2) == (3.0, 3.0)
    i1, i2 = kin.eq_invariants(np.diag([4.0, 0.5, 0.5]))
    assert i1 == pytest.approx(5.0)
    assert i2 == pytest.approx(4.25)  # tr cof = 0.25 + 2 + 2


def test_eq_invariants_rotation_invariant():
    rng = make_rng(1)
    for _ in range(50):
        c = rand_unimodular_spd(rng)
        q = rand_rot(rng)
        a = kin.eq_invariants(c)
        b = kin.eq_invariants(kin.rotate(q, c))
        np.testing.assert_allclose(a, b, rtol=1e-12)


def test_neq_invariants_special_cases():
    rng = make_rng(2)
    cb = rand_unimodular_spd(rng)
    i1e, i2e = kin.neq_invariants(cb, cb.copy())
    np.testing.assert_allclose([i1e, i2e], [3.0, 3.0], rtol=1e-12)
    i1e, i2e = kin.neq_invariants(cb, np.eye(3))
    np.testing.assert_allclose(
        [i1e, i2e], [np.trace(cb), np.trace(t3.inv_spd(cb))], rtol=1e-12
    )


def test_neq_invariants_hand_case():
    i1e, i2e = kin.neq_invariants(
        np.diag([4.0, 0.5, 0.5]), np.diag([2.0, 2.0**-0.5, 2.0**-0.5])
    )
    assert i1e == pytest.approx(2.0 + np.sqrt(2.0), rel=1e-12)  # 3.414214
    assert i2e == pytest.approx(0.5 + 2.0 * np.sqrt(2.0), rel=1e-12)  # 3.328427


def test_project_force():
    ap = kin.project_force(np.diag([1.0, 2.0, 3.0]), np.eye(3))
    np.testing.assert_allclose(ap, np.diag([-1.0, 0.0, 1.0]), atol=1e-15)

    # Forces with Ci : A = 0 are fixed points of the projection.
    rng = make_rng(3)
    ci = rand_spd(rng)
    a = rand_sym(rng)
    a -= t3.ddot(ci, a) / t3.ddot(ci, ci) * ci
    np.testing.assert_allclose(kin.project_force(a, ci), a, atol=1e-14)

    ap = kin.project_force(np.diag([1.0, 0.0, 0.0]), np.diag([2.0, 1.0, 0.5]))
    np.testing.assert_allclose(
        ap, np.diag([2.0 / 3.0, -2.0 / 3.0, -4.0 / 3.0]), rtol=1e-14
    )


def test_diss_invariants_values():
    np.testing.assert_allclose(
        kin.diss_invariants(np.zeros((3, 3)), np.eye(3)),
        [0, 0, 0, 3, 1.5, 0, 0, 0, 0],
        atol=1e-15,
    )
    np.testing.assert_allclose(
        kin.diss_invariants(np.diag([-1.0, 0.0, 1.0]), np.eye(3)),
        [0, 1, 0.5, 3, 1.5, 0, 1, 0, 1],
        atol=1e-15,
    )


def test_diss_invariants_isotropy():
    rng = make_rng(4)
    for _ in range(200):
        ap = rand_sym(rng)
        cb = rand_unimodular_spd(rng)
        q = rand_rot(rng)
        a = kin.diss_invariants(ap, cb)
        b = kin.diss_invariants(kin.rotate(q, ap), kin.rotate(q, cb))
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-12)


def test_neq_invariants_isotropy():
    rng = make_rng(5)
    for _ in range(100):
        cb = rand_unimodular_spd(rng)
        ci = rand_spd(rng)
        q = rand_rot(rng)
        a = kin.neq_invariants(cb, ci)
        b = kin.neq_invariants(kin.rotate(q, cb), kin.rotate(q, ci))
        np.testing.assert_allclose(a, b, rtol=1e-11)


# -- analytic gradients vs central finite differences -------------------------


def test_eq_invariant_gradients_fd():
    rng = make_rng(6)
    for _ in range(100):
        c = rand_spd(rng)
        g1, g2 = kin.eq_invariant_gradients(c)

        def i1_of(x):
            return kin.eq_invariants(t3.det_ch(x) ** (-1.0 / 3.0) * x)[0]

        def i2_of(x):
            return kin.eq_invariants(t3.det_ch(x) ** (-1.0 / 3.0) * x)[1]

        assert_close_rel(g1, fd_grad_sym(i1_of, c), 1e-6)
        assert_close_rel(g2, fd_grad_sym(i2_of, c), 1e-6)


def test_eq_invariant_gradients_vanish_at_identity():
    g1, g2 = kin.eq_invariant_gradients(np.eye(3))
    np.testing.assert_allclose(g1, 0.0, atol=1e-14)
    np.testing.assert_allclose(g2, 0.0, atol=1e-14)


def test_neq_invariant_gradients_fd():
    rng = make_rng(7)
    for _ in range(100):
        c = rand_spd(rng)
        ci = rand_spd(rng)
        cbar = t3.det_ch(c) ** (-1.0 / 3.0) * c
        h1, h2 = kin.neq_invariant_gradients_Ci(cbar, ci)
        assert_close_rel(h1, fd_grad_sym(lambda x: kin.neq_invariants(cbar, x)[0], ci), 1e-6)
        assert_close_rel(h2, fd_grad_sym(lambda x: kin.neq_invariants(cbar, x)[1], ci), 1e-6)
        n1, n2 = kin.neq_invariant_gradients_C(c, ci)

        def i1_c(x):
            return kin.neq_invariants(t3.det_ch(x) ** (-1.0 / 3.0) * x, ci)[0]

        def i2_c(x):
            return kin.neq_invariants(t3.det_ch(x) ** (-1.0 / 3.0) * x, ci)[1]

        assert_close_rel(n1, fd_grad_sym(i1_c, c), 1e-6)
        assert_close_rel(n2, fd_grad_sym(i2_c, c), 1e-6)


def test_diss_invariant_gradients_fd():
    rng = make_rng(8)
    for _ in range(40):
        a = rand_sym(rng)
        ci = rand_spd(rng)
        cbar = rand_unimodular_spd(rng)
        ap = kin.project_force(a, ci)

        ga = kin.diss_grad_A(ap, ci, cbar)
        gci = kin.diss_invariant_gradients_Ci(a, ci, cbar)
        gc_basis = kin.diss_grad_Ap_basis(ap, cbar)
        for g_idx in range(9):
            np.testing.assert_allclose(
                ga[g_idx],
                fd_grad_sym(
                    lambda x: kin.diss_invariants(kin.project_force(x, ci), cbar)[g_idx], a
                ),
                rtol=2e-5, atol=1e-7,
            )
            np.testing.assert_allclose(
                gci[g_idx],
                fd_grad_sym(
                    lambda x: kin.diss_invariants(kin.project_force(a, x), cbar)[g_idx], ci
                ),
                rtol=2e-5, atol=1e-6,
            )
            np.testing.assert_allclose(
                gc_basis[g_idx],
                fd_grad_sym(lambda x: kin.diss_invariants(x, cbar)[g_idx], ap),
                rtol=2e-5, atol=1e-7,
            )


def test_diss_invariant_gradients_C_fd():
    rng = make_rng(9)
    for _ in range(20):
        ap = rand_sym(rng)
        c = rand_spd(rng)
        gc = kin.diss_invariant_gradients_C(ap, c)
        for g_idx in range(9):
            np.testing.assert_allclose(
                gc[g_idx],
                fd_grad_sym(
                    lambda x: kin.diss_invariants(
                        ap, t3.det_ch(x) ** (-1.0 / 3.0) * x
                    )[g_idx],
                    c,
                ),
                rtol=2e-5, atol=1e-7,
            )


def test_diss_grad_zero_force_directions():
    # d(tr Ap)/dA vanishes at Ci = I (trace of the projected force is zero
    # along every direction there).
    ga = kin.diss_grad_A(np.zeros((3, 3)), np.eye(3), np.eye(3))
    np.testing.assert_allclose(ga[0], 0.0, atol=1e-15)


# -- convexity properties -----------------------------------------------------


CONVEX_IDX = (1, 2, 6, 8)
LINEAR_IDX = kin.DISS_LINEAR_IDX


def test_diss_invariants_convex_in_Ap():
    rng = make_rng(10)
    for _ in range(1000):
        x = rand_sym(rng, scale=rng.uniform(0.2, 2.0))
        y = rand_sym(rng, scale=rng.uniform(0.2, 2.0))
        cbar = rand_unimodular_spd(rng)
        fx = kin.diss_invariants(x, cbar)
        fy = kin.diss_invariants(y, cbar)
        for lam in (0.25, 0.5, 0.75):
            mid = kin.diss_invariants(lam * x + (1 - lam) * y, cbar)
            gap = mid - (lam * fx + (1 - lam) * fy)
            assert np.max(gap[list(CONVEX_IDX)]) <= 1e-12
            # Linear invariants are exactly additive.
            np.testing.assert_allclose(gap[list(LINEAR_IDX)], 0.0, atol=1e-13)


def test_diss_invariants_convex_in_A():
    # Composition with the linear projection A -> Ap preserves convexity.
    rng = make_rng(11)
    for _ in range(300):
        ci = rand_spd(rng)
        cbar = rand_unimodular_spd(rng)
        x = rand_sym(rng)
        y = rand_sym(rng)

        def f(a):
            return kin.diss_invariants(kin.project_force(a, ci), cbar)

        fx, fy = f(x), f(y)
        for lam in (0.25, 0.5, 0.75):
            gap = f(lam * x + (1 - lam) * y) - (lam * fx + (1 - lam) * fy)
            assert np.max(gap[list(CONVEX_IDX)]) <= 1e-12
