import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm

from gensympl.errors import CertificationError, DomainError, NumericalError, ValidationError
from gensympl.forms import BoxDomain, OneFormField, TwoFormField, VectorFieldT, corpus
from gensympl.moser import (CentredMember, DarbouxConfig, Plateau, _ball_grid, check_star,
                            darboux_pipeline, derive_starstar, flow, gauss_legendre01,
                            interpolant, jump_chart, jump_chart_inverse, moser_field,
                            norm_and_inv_norm, poincare_primitive)
from gensympl.symplin import eig_magnitudes, j_can, opnorm


# ---------------------------------------------------------------- certification

def test_canonical_certificate_and_constants():
    s = corpus("canonical")
    cert = check_star(s)
    assert cert.C1 == pytest.approx(0.99) and cert.C2 == pytest.approx(1 / 0.99)
    assert np.all(cert.modulus == 0)
    ss = derive_starstar(cert, s, np.zeros(2))
    assert ss.D == pytest.approx(2 / 0.99)
    assert ss.R == pytest.approx(1.0)


def test_heaviside_certificate_bounds_hold_on_samples(heaviside_form, heaviside_cert):
    cert, ss = heaviside_cert
    pts = cert.K.points()
    for e, m in heaviside_form:
        if e > cert.eta:
            continue
        mags = eig_magnitudes(m(pts))
        assert cert.C1 <= mags.min() and mags.max() <= cert.C2
    assert np.all(np.diff(cert.modulus) >= 0)
    assert 0 < cert.C1 <= cert.C2


def test_scaled_eps_reports_minima():
    with pytest.raises(CertificationError) as info:
        check_star(corpus("scaled_eps"))
    assert info.value.details["per_eps_min"] == [0.4, 0.2, 0.1, 0.05]


def test_coarse_delta_grid_cannot_give_a_radius(heaviside_form):
    cert = check_star(heaviside_form, k_points=11)
    with pytest.raises(CertificationError, match="refine"):
        derive_starstar(cert, heaviside_form, np.zeros(2))


def test_centre_outside_box_rejected(heaviside_form, heaviside_cert):
    with pytest.raises(ValidationError):
        derive_starstar(heaviside_cert[0], heaviside_form, np.array([2.0, 0.0]))


@given(A=arrays(np.float64, (3, 4, 4), elements=st.floats(-3, 3).map(lambda v: round(v, 8))))
def test_closed_form_norms_match_svd(A):
    B = A - np.swapaxes(A, 1, 2)
    B2 = B[:, :2, :2]
    s = np.linalg.svd(B2, compute_uv=False)
    nrm, inv = norm_and_inv_norm(B2)
    np.testing.assert_allclose(nrm, s[:, 0], rtol=1e-12, atol=1e-300)
    ok = s[:, -1] > 1e-8
    np.testing.assert_allclose(inv[ok], 1 / s[ok, -1], rtol=1e-10)


# ----------------------------------------------------------- Moser ingredients

def test_interpolant_endpoints():
    m = corpus("heaviside")[3]
    beta = m(np.zeros(2))
    q = np.array([[0.3, 0.1], [-0.02, 0.5]])
    np.testing.assert_array_equal(interpolant(m, beta, 0.0)(q), m(q))
    np.testing.assert_array_equal(interpolant(m, beta, 1.0)(q), np.broadcast_to(beta, (2, 2, 2)))
    c = TwoFormField.constant(BoxDomain.cube(2, 1.0, 3), 3 * j_can(1))
    np.testing.assert_array_equal(interpolant(c, 3 * j_can(1), 0.5)(q[0]), 3 * j_can(1))
    with pytest.raises(ValidationError):
        interpolant(m, beta, 1.5)


def test_primitive_examples():
    dom = BoxDomain.cube(2, 1.0, 3)
    C = TwoFormField.constant(dom, [[0, 1], [-1, 0]])
    np.testing.assert_allclose(poincare_primitive(C, np.array([1.0, 0.0])), [0.0, 0.5])
    assert np.all(poincare_primitive(C, np.zeros(2)) == 0.0)
    zero = TwoFormField.constant(dom, np.zeros((2, 2)))
    assert np.all(poincare_primitive(zero, np.array([0.4, -0.3])) == 0.0)
    with pytest.raises(DomainError):
        poincare_primitive(C, np.array([1.5, 0.0]))


def test_gauss_legendre_exact_for_degree_31():
    x, w = gauss_legendre01(16)
    for k in range(32):
        assert np.sum(w * x ** k) == pytest.approx(1 / (k + 1), rel=1e-13)


def test_moser_field_example():
    dom = BoxDomain.cube(2, 1.0, 3)
    mu = TwoFormField.constant(dom, j_can(1))
    alpha = OneFormField(dom, lambda p: np.tile([0.0, 0.5], (len(p), 1)))
    X = moser_field(mu, alpha, np.zeros(2))
    for v in np.eye(2):
        assert X @ j_can(1) @ v == pytest.approx(-np.array([0.0, 0.5]) @ v, abs=1e-15)
    np.testing.assert_allclose(X, np.linalg.solve(j_can(1).T, [0.0, -0.5]))


def test_moser_field_zero_and_singular():
    dom = BoxDomain.cube(2, 1.0, 3)
    mu = TwoFormField.constant(dom, j_can(1))
    zero = OneFormField(dom, lambda p: np.zeros_like(p))
    assert np.all(moser_field(mu, zero, np.array([0.3, 0.2])) == 0)
    sing = TwoFormField.constant(dom, np.zeros((2, 2)))
    with pytest.raises(NumericalError) as info:
        moser_field(sing, OneFormField(dom, lambda p: np.ones_like(p)), np.zeros(2))
    assert "inv_norm" in info.value.details


@given(A=arrays(np.float64, (4, 4), elements=st.floats(-2, 2)),
       a=arrays(np.float64, (4,), elements=st.floats(-1, 1)))
def test_moser_field_solves_and_is_bounded(A, a):
    B = A - A.T
    mags = eig_magnitudes(B)
    if mags[0] < 0.05:
        return
    dom = BoxDomain.cube(4, 1.0, 3)
    X = moser_field(TwoFormField.constant(dom, B), OneFormField(dom, lambda p: np.tile(a, (len(p), 1))),
                    np.zeros(4))
    assert np.linalg.norm(X @ B + a) <= 1e-12 * max(np.linalg.norm(a), 1e-300) + 1e-300
    assert np.linalg.norm(X) <= np.linalg.norm(a) / mags[0] * (1 + 1e-12)


def test_plateau_examples():
    p = Plateau(0.5, 1.0)
    assert p(np.array([0.3, 0.4])) == 1.0
    assert p(np.array([0.75, 0.0])) == 0.0
    assert p(np.array([2.0, 0.0])) == 0.0
    with pytest.raises(ValidationError):
        Plateau(1.0, 1.0)


@given(r=st.lists(st.floats(0, 2), min_size=2, max_size=30))
def test_plateau_is_radially_monotone(r):
    p = Plateau(0.5, 1.0)
    r = np.sort(np.asarray(r))
    vals = p(np.column_stack([r, np.zeros_like(r)]))
    assert np.all(np.diff(vals) <= 0) and np.all((0 <= vals) & (vals <= 1))


# ------------------------------------------------------------------------ flow

def _field(rule):
    return VectorFieldT(BoxDomain.cube(2, 10.0, 3), rule)


def test_flow_of_zero_and_constant_fields():
    q0 = np.array([[0.1, 0.2], [-0.3, 0.4]])
    fr = flow(_field(lambda t, z: np.zeros_like(z)), q0, step=0.1)
    np.testing.assert_array_equal(fr.points, q0)
    np.testing.assert_array_equal(fr.jacobian, np.broadcast_to(np.eye(2), (2, 2, 2)))
    c = np.array([0.5, -1.0])
    fr = flow(_field(lambda t, z: np.broadcast_to(c, z.shape).copy()), q0, 0.0, 0.7, step=0.1)
    np.testing.assert_allclose(fr.points, q0 + 0.7 * c, atol=1e-15)


@given(A=arrays(np.float64, (2, 2), elements=st.floats(-1, 1)),
       q=arrays(np.float64, (2,), elements=st.floats(-1, 1)))
def test_linear_flow_matches_matrix_exponential(A, q):
    fr = flow(_field(lambda t, z: z @ A.T), q[None], step=0.01, fd_step=1e-5)
    E = expm(A)
    np.testing.assert_allclose(fr.points[0], E @ q, atol=1e-9)
    np.testing.assert_allclose(fr.jacobian[0], E, atol=1e-8)


def test_backward_flow_inverts():
    Y = _field(lambda t, z: np.column_stack([np.sin(z[:, 1]) + t, z[:, 0] ** 2]))
    q0 = np.random.default_rng(1).uniform(-0.5, 0.5, (10, 2))
    fwd = flow(Y, q0, 0.0, 1.0, 0.01, jacobian=False)
    back = flow(Y, fwd.points, 1.0, 0.0, 0.01, jacobian=False)
    np.testing.assert_allclose(back.points, q0, atol=1e-9)


def test_flow_halves_step_on_monitor_failure():
    fr = flow(_field(lambda t, z: -40.0 * z), np.array([[1.0, 1.0]]), step=0.1, tol=1e-8)
    assert fr.halvings > 0
    np.testing.assert_allclose(fr.points, np.exp(-40.0) * np.ones((1, 2)), atol=1e-8)
    with pytest.raises(NumericalError):
        flow(_field(lambda t, z: -40.0 * z), np.array([[1.0, 1.0]]), step=0.1, tol=1e-14,
             max_halvings=2)


def test_flow_snapshots_and_stop():
    fr = flow(_field(lambda t, z: np.ones_like(z)), np.zeros((1, 2)), step=0.1,
              snapshots=(0.0, 0.5, 1.0), stop_outside=BoxDomain.cube(2, 0.75, 3))
    assert sorted(fr.snapshots) == pytest.approx([0.0, 0.5, 1.0])
    assert fr.stopped[0] and fr.stop_time[0] == pytest.approx(0.8)
    np.testing.assert_allclose(fr.snapshots[0.5][0], [[0.5, 0.5]], atol=1e-14)


# -------------------------------------------------------------------- pipeline

def test_heaviside_run_invariants(heaviside_run):
    res, _ = heaviside_run
    run = res.report.runs[0]
    cfg = DarbouxConfig()
    assert run.alpha_origin == 0.0
    assert run.origin_drift <= cfg.flow_tol
    assert run.inverse_error <= 10 * cfg.flow_tol
    assert run.min_det > 0
    assert run.poincare_defect <= cfg.quad_tol
    assert res.starstar.sweep_max_inv <= res.starstar.D
    c = res.report.constants
    assert c["R_double_prime"] < c["R_prime"] < c["R"]


def test_phi_map_is_invertible(heaviside_run):
    phi = heaviside_run[0].maps[0]
    q = np.array([[0.005, -0.004], [-0.003, 0.0]])
    np.testing.assert_allclose(phi.inv(phi(q)), q, atol=1e-9)


def test_twice_canonical_gives_root_two_scaling():
    res = darboux_pipeline(corpus("canonical", scale=2.0), np.zeros(2),
                           DarbouxConfig(step=0.05, verify_points=21, eps_indices=(0,)))
    s = res.samples[0]
    np.testing.assert_allclose(s["values"], np.sqrt(2) * s["points"], atol=1e-14)
    assert res.report.runs[0].pullback_error <= 1e-10


def test_table_and_direct_modes_agree(heaviside_form, heaviside_cert):
    cert, ss = heaviside_cert
    out = {}
    for mode in ("table", "direct"):
        cfg = DarbouxConfig(step=0.02, verify_points=9, eps_indices=(0,), mode=mode,
                            inverse_points=5)
        out[mode] = darboux_pipeline(heaviside_form, np.zeros(2), cfg, cert, ss).samples[0]
    np.testing.assert_allclose(out["table"]["values"], out["direct"]["values"], atol=1e-8)


def test_error_family_is_discretization_dominated(heaviside_form, heaviside_cert):
    cert, ss = heaviside_cert
    errs = []
    for step, q in ((0.04, 8), (0.02, 16)):
        cfg = DarbouxConfig(step=step, quad_order=q, verify_points=21, eps_indices=(0,),
                            inverse_points=5, flow_tol=1e-6)
        errs.append(darboux_pipeline(heaviside_form, np.zeros(2), cfg, cert, ss)
                    .report.runs[0].pullback_error)
    # either the order-2+ term dominates or the error already sits at the quadrature floor
    assert errs[1] <= errs[0] / 4 or errs[1] <= 1e-7


def test_moser_field_modulus_uniform_over_ladder(heaviside_form, heaviside_cert):
    cert, ss = heaviside_cert
    R = ss.R
    pts, per_axis = _ball_grid(0.8 * R, 2, 21)
    cut = Plateau(0.9 * R, R)
    sups = []
    for e, m in heaviside_form:
        cm = CentredMember(m, np.zeros(2), R, 16)
        X = cm.moser_rule(cut)(0.5, pts)
        grid = dict(zip(map(tuple, np.round(pts / (1.6 * R / (per_axis - 1))).astype(int)), X))
        diffs = [np.linalg.norm(grid[k] - grid[(k[0] + 1, k[1])]) for k in grid
                 if (k[0] + 1, k[1]) in grid]
        sups.append(max(diffs))
        assert np.max(np.linalg.norm(X, axis=1)) <= ss.D * np.max(np.linalg.norm(cm.alpha(pts), axis=1))
    # the finest member's modulus is within a D^2 factor of the coarsest one
    assert max(sups) <= ss.D ** 2 * min(sups) + 1e-12


# --------------------------------------------------------------- jump chart

@given(y=arrays(np.float64, (5, 2), elements=st.floats(-1, 1)))
def test_jump_chart_round_trip(y):
    x, J = jump_chart(y)
    back, Ji = jump_chart_inverse(x)
    np.testing.assert_allclose(back, y, atol=1e-15)
    # the chart is only Lipschitz at y = 0, where the derivative is a convention
    off = y[:, 0] != 0
    np.testing.assert_allclose((J @ Ji)[off], np.broadcast_to(np.eye(2), J.shape)[off], atol=1e-15)
