"""Kernel operator oracles: derivative accuracy, curvature, traces, norms."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crflab.bolza import BaseGeometry, ke_factor
from crflab.errors import OutOfRegimeError, SingularMetricError
from crflab.fields import (Form11Field, HermitianMetricField, RealScalarField,
                           TorsionField)
from crflab.geom import (chern_ricci, chern_scalar, christoffels,
                         ddbar_scalar, generalized_eigs, grad_norm_sq,
                         laplacian, pinch_check, tensor_norm, torsion,
                         trace_form, wedge)
from crflab.grids import GridSpec


def scalar(vals, spec, state="active"):
    return RealScalarField(vals, spec, state)


def identity_metric(spec):
    return HermitianMetricField(np.ones(spec.shape),
                                np.zeros(spec.shape, complex),
                                np.ones(spec.shape), spec, "active",
                                admissible=True)


# ---------------------------------------------------------------------------
# ddbar
# ---------------------------------------------------------------------------

def test_ddbar_fiber_unit_hessian(geo_full21):
    """Fiber Hessian normalization: d1 d1bar = quarter fiber Laplacian.

    The periodic stand-in for |z1|^2 near its minimum is
    f = (1 - cos(2 pi x1))/pi^2, whose d1 d1bar equals cos(2 pi x1), exactly
    1 at the minimum; spectral differentiation reproduces it to roundoff.
    """
    spec = geo_full21.spec
    fx, _ = spec.fiber_points()
    f = np.broadcast_to((1 - np.cos(2 * np.pi * fx)) / np.pi ** 2,
                        spec.shape).copy()
    dd = ddbar_scalar(scalar(f, spec))
    expect = np.broadcast_to(np.cos(2 * np.pi * fx), spec.shape)
    idx = geo_full21.interior
    assert np.max(np.abs(dd.c11[idx] - expect[idx])) < 1e-10
    assert np.max(np.abs(dd.c12[idx])) < 1e-10
    assert np.max(np.abs(dd.c22[idx])) < 1e-12


def test_ddbar_pluriharmonic_base(geo65):
    spec = geo65.spec
    w = geo65.w
    f = np.where(geo65.active, np.real(w ** 2), 0.0)
    dd = ddbar_scalar(scalar(f, spec))
    assert np.max(np.abs(dd.c22[geo65.interior])) < 1e-9


def test_ddbar_gaussian_refinement(group):
    errs = []
    for n in (33, 65, 129):
        spec = GridSpec(base_nx=n, base_ny=n)
        geo = BaseGeometry(spec, group)
        w = geo.w
        f = np.where(geo.active, np.exp(-4.0 * np.abs(w - 0.1) ** 2), 0.0)
        dd = ddbar_scalar(scalar(f, spec))
        s = np.abs(w - 0.1) ** 2
        exact = np.exp(-4.0 * s) * (16.0 * s - 4.0)
        errs.append(np.max(np.abs(dd.c22 - exact)[geo.interior]))
    order = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(order > 1.8) and np.all(order < 2.2)


def test_ddbar_requires_filled_field(geo33):
    from crflab.errors import BoundaryDataError
    f = RealScalarField(np.zeros(geo33.spec.shape), geo33.spec, "interior")
    with pytest.raises(BoundaryDataError):
        ddbar_scalar(f)


# ---------------------------------------------------------------------------
# christoffels / torsion
# ---------------------------------------------------------------------------

def test_christoffels_identity_and_scale(geo33):
    spec = geo33.spec
    g = identity_metric(spec)
    gam = christoffels(g)
    assert np.max(np.abs(gam)) == 0.0
    g2 = HermitianMetricField(3.0 * g.c11, 3.0 * g.c12, 3.0 * g.c22, spec,
                              "active", admissible=True)
    assert np.max(np.abs(christoffels(g2))) == 0.0


def test_christoffels_hyperbolic_factor(group, geo65, geo129):
    sups = []
    for geo in (geo65, geo129):
        spec = geo.spec
        gs = geo.eval_invariant(ke_factor, (1, 1)).real
        g = HermitianMetricField(np.ones(spec.shape),
                                 np.zeros(spec.shape, complex), gs, spec,
                                 "active", admissible=True)
        gam = christoffels(g)
        w = geo.w
        expect = 2.0 * np.conj(w) / (1.0 - np.abs(w) ** 2)
        err = np.abs(gam[1, 1, 1] - expect)
        bulk = geo.interior & (np.abs(w) <= 0.6)
        assert np.max(err[bulk]) < 30.0 * spec.h_bx ** 2
        sups.append(np.max(err[geo.interior]))
    assert 3.0 < sups[0] / sups[1] < 5.0   # global O(h^2)

    geo, spec = geo65, geo65.spec
    gs = geo.eval_invariant(ke_factor, (1, 1)).real
    g = HermitianMetricField(np.ones(spec.shape), np.zeros(spec.shape, complex),
                             gs, spec, "active", admissible=True)
    gam = christoffels(g)
    c = 2.5   # scale invariance
    g2 = HermitianMetricField(c * g.c11, c * g.c12, c * g.c22, spec, "active",
                              admissible=True)
    gam2 = christoffels(g2)
    assert np.max(np.abs(gam2 - gam)[..., geo.interior]) < 1e-10


def test_torsion_hand_case_and_antisymmetry(geo65):
    spec = geo65.spec
    geo = geo65
    x2 = np.where(geo.active, geo.w.real, 0.0)
    g = HermitianMetricField(1.0 + 0.1 * x2, np.zeros(spec.shape, complex),
                             np.ones(spec.shape), spec, "active",
                             admissible=True)
    t = torsion(g)
    # T_{1 2 1bar} = -d2 g_{1 1bar} = -0.05 (d2 = (d_x - i d_y)/2)
    sel = geo.eroded_interior(1)
    assert np.max(np.abs(t.t1[sel] + 0.05)) < 1e-10
    assert np.max(np.abs(t.t2[sel])) < 1e-10
    # antisymmetry is structural
    assert np.all(t.component(1, 1, 1) == 0.0)
    assert np.all(t.component(2, 1, 2) == -t.component(1, 2, 2))


def test_torsion_of_potential_metric_vanishes(geo65):
    spec = geo65.spec
    geo = geo65
    w = geo.w
    psi = np.where(geo.active, np.exp(-3.0 * np.abs(w + 0.2) ** 2), 0.0)
    dd = ddbar_scalar(scalar(psi, spec))
    g = HermitianMetricField(1.0 + dd.c11, dd.c12, 2.0 + dd.c22, spec,
                             "interior", admissible=True)
    t = torsion(g)
    sel = geo.eroded_interior(1)
    assert np.max(np.abs(t.t1[sel])) < 1e-8
    assert np.max(np.abs(t.t2[sel])) < 1e-8


# ---------------------------------------------------------------------------
# curvature
# ---------------------------------------------------------------------------

def test_chern_ricci_constant_metric(geo33):
    g = identity_metric(geo33.spec)
    ric = chern_ricci(g, geo33.active)
    assert np.max(np.abs(ric.c22[geo33.interior])) == 0.0


def test_chern_ricci_hyperbolic_converges(group):
    sups = []
    for n in (65, 129):
        spec = GridSpec(base_nx=n, base_ny=n)
        geo = BaseGeometry(spec, group)
        gs = geo.eval_invariant(ke_factor, (1, 1)).real
        g = HermitianMetricField(np.ones(spec.shape),
                                 np.zeros(spec.shape, complex), gs, spec,
                                 "active", admissible=True)
        ric = chern_ricci(g, geo.active)
        rel = np.abs(ric.c22 + gs) / gs
        sups.append(np.max(rel[geo.interior]))
    assert 3.0 < sups[0] / sups[1] < 5.0


def test_chern_ricci_exp_base(geo65):
    spec = geo65.spec
    geo = geo65
    g22 = np.where(geo.active, np.exp(np.abs(geo.w) ** 2), 1.0)
    g = HermitianMetricField(np.ones(spec.shape), np.zeros(spec.shape, complex),
                             g22, spec, "active", admissible=True)
    ric = chern_ricci(g, geo.active)
    sel = geo.eroded_interior(1)
    assert np.max(np.abs(ric.c22[sel] + 1.0)) < 5e-3


def test_chern_scalar_product_and_scaling(geo65):
    spec = geo65.spec
    geo = geo65
    gs = geo.eval_invariant(ke_factor, (1, 1)).real
    g = HermitianMetricField(np.ones(spec.shape), np.zeros(spec.shape, complex),
                             gs, spec, "active", admissible=True)
    r = chern_scalar(g, geo.active)
    sel = np.abs(geo.w) <= 0.5
    sel &= geo.interior
    assert np.max(np.abs(r.values[sel] + 1.0)) < 2e-3
    c = 2.0
    g2 = HermitianMetricField(c * g.c11, c * g.c12, c * g.c22, spec, "active",
                              admissible=True)
    r2 = chern_scalar(g2, geo.active)
    assert np.max(np.abs(r2.values[sel] - r.values[sel] / c)) < 1e-10
    flat = identity_metric(spec)
    assert np.max(np.abs(chern_scalar(flat, geo.active).values[geo.interior])) \
        == 0.0


def test_chern_ricci_rejects_singular(geo33):
    spec = geo33.spec
    g = identity_metric(spec)
    g.c11 = g.c11.copy()
    iy, ix = np.argwhere(geo33.interior)[0]
    g.c11[iy, ix] = -1.0
    with pytest.raises(SingularMetricError):
        chern_ricci(g, geo33.active)


# ---------------------------------------------------------------------------
# algebra: traces, wedges, norms
# ---------------------------------------------------------------------------

def test_trace_examples(geo33):
    spec = geo33.spec
    g = HermitianMetricField(2.0 * np.ones(spec.shape),
                             np.zeros(spec.shape, complex),
                             np.ones(spec.shape), spec, "active",
                             admissible=True)
    a = Form11Field(np.ones(spec.shape), np.zeros(spec.shape, complex),
                    np.ones(spec.shape), spec, "active")
    tr = trace_form(g, a)
    assert np.allclose(tr.values, 1.5)
    tr_self = trace_form(g, g)
    assert np.allclose(tr_self.values, 2.0)


def test_trace_wedge_identity_random(geo33):
    rng = np.random.default_rng(7)
    spec = geo33.spec
    shape = spec.shape
    for _ in range(5):
        c12 = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        g = HermitianMetricField(2.0 + rng.random(shape),
                                 0.3 * c12, 2.0 + rng.random(shape), spec,
                                 "active", admissible=True)
        a12 = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        a = Form11Field(rng.normal(size=shape), a12, rng.normal(size=shape),
                        spec, "active")
        lhs = trace_form(g, a).values * wedge(
            Form11Field(g.c11, g.c12, g.c22, spec, "active"),
            Form11Field(g.c11, g.c12, g.c22, spec, "active")).coeff
        rhs = 2.0 * wedge(a, Form11Field(g.c11, g.c12, g.c22, spec,
                                         "active")).coeff
        assert np.max(np.abs(lhs - rhs)) < 1e-12 * np.max(1 + np.abs(lhs))


def test_wedge_examples(geo33):
    spec = geo33.spec
    shape = spec.shape
    ident = Form11Field(np.ones(shape), np.zeros(shape, complex),
                        np.ones(shape), spec, "active")
    assert np.allclose(wedge(ident, ident).coeff, 2.0)
    d23 = Form11Field(2.0 * np.ones(shape), np.zeros(shape, complex),
                      3.0 * np.ones(shape), spec, "active")
    assert np.allclose(wedge(d23, d23).coeff, 12.0)
    base_only = Form11Field(np.zeros(shape), np.zeros(shape, complex),
                            np.ones(shape), spec, "active")
    assert np.allclose(wedge(base_only, base_only).coeff, 0.0)


def test_volume_form_trace_identity(geo33):
    """tr_omega(alpha) omega^2 = 2 alpha ^ omega and the section-5 identity
    tr_omega(tilde) = (tilde^2/omega^2) tr_tilde(omega)."""
    rng = np.random.default_rng(3)
    spec = geo33.spec
    shape = spec.shape

    def rand_metric():
        c12 = 0.2 * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
        return HermitianMetricField(1.5 + rng.random(shape), c12,
                                    1.5 + rng.random(shape), spec, "active",
                                    admissible=True)

    g, h = rand_metric(), rand_metric()
    tr_gh = trace_form(g, h).values
    tr_hg = trace_form(h, g).values
    wg = wedge(g, g).coeff
    wh = wedge(h, h).coeff
    assert np.max(np.abs(tr_gh - wh / wg * tr_hg)) < 1e-12 * np.max(tr_gh)


def test_laplacian_and_grad(geo65):
    spec = geo65.spec
    geo = geo65
    g = identity_metric(spec)
    w = geo.w
    f = np.where(geo.active, np.abs(w) ** 2, 0.0)
    lap = laplacian(g, scalar(f, spec))
    sel = geo.eroded_interior(1)
    assert np.max(np.abs(lap.values[sel] - 1.0)) < 1e-9
    g2 = HermitianMetricField(2 * g.c11, 2 * g.c12, 2 * g.c22, spec, "active",
                              admissible=True)
    lap2 = laplacian(g2, scalar(f, spec))
    assert np.max(np.abs(lap2.values[sel] - 0.5)) < 1e-9
    const = laplacian(g, scalar(np.ones(spec.shape), spec))
    assert np.max(np.abs(const.values[geo.interior])) == 0.0

    fx2 = np.where(geo.active, w.real, 0.0)
    gn = grad_norm_sq(g, scalar(fx2, spec))
    assert np.max(np.abs(gn.values[sel] - 0.25)) < 1e-10
    gn2 = grad_norm_sq(g2, scalar(fx2, spec))
    assert np.max(np.abs(gn2.values[sel] - 0.125)) < 1e-10
    gn0 = grad_norm_sq(g, scalar(np.ones(spec.shape), spec))
    assert np.max(np.abs(gn0.values[geo.interior])) == 0.0


def test_tensor_norm_examples(geo33):
    spec = geo33.spec
    shape = spec.shape
    g = identity_metric(spec)
    zero = TorsionField(np.zeros(shape, complex), np.zeros(shape, complex),
                        spec)
    assert np.max(tensor_norm(zero, g).values) == 0.0
    c = 0.3 + 0.4j
    t = TorsionField(np.zeros(shape, complex), np.full(shape, c), spec)
    val = tensor_norm(t, g).values
    assert np.allclose(val, 2.0 * abs(c) ** 2)
    # isometric rescale: recomputing torsion from c*g scales |T|^2 by 1/c
    lam = 1.7
    g2 = HermitianMetricField(lam * g.c11, lam * g.c12, lam * g.c22, spec,
                              "active", admissible=True)
    t2 = TorsionField(lam * t.t1, lam * t.t2, spec)
    val2 = tensor_norm(t2, g2).values
    assert np.allclose(val2, val / lam)


# ---------------------------------------------------------------------------
# pinch certification
# ---------------------------------------------------------------------------

def _const_metric(spec, lam1, lam2):
    return HermitianMetricField(lam1 * np.ones(spec.shape),
                                np.zeros(spec.shape, complex),
                                lam2 * np.ones(spec.shape), spec, "active",
                                admissible=True)


def test_pinch_examples(geo33):
    spec = geo33.spec
    ref = _const_metric(spec, 1.0, 1.0)
    mask = geo33.interior
    res = pinch_check(_const_metric(spec, 1.0, 1.0), ref, 0.01, mask)
    assert res.passed and abs(res.eig_min - 1.0) < 1e-12

    res2 = pinch_check(_const_metric(spec, 1.05, 0.95), ref, 0.01, mask)
    assert res2.passed
    assert res2.interval == (0.8, 1.2)
    assert 0.8 <= res2.eig_min and res2.eig_max <= 1.2

    res3 = pinch_check(_const_metric(spec, 1.3, 0.8), ref, 0.01, mask)
    assert not res3.passed

    with pytest.raises(OutOfRegimeError):
        pinch_check(ref, ref, 0.05, mask)


@settings(max_examples=40, deadline=None)
@given(l1=st.floats(0.5, 2.0), l2=st.floats(0.5, 2.0),
       eps=st.floats(1e-4, 0.049))
def test_pinch_certification_sound(l1, l2, eps):
    """Whenever certification passes, exact eigenvalues lie in the interval."""
    spec = GridSpec(base_nx=9, base_ny=9)

    class FakeGeo:
        interior = np.ones(spec.shape, dtype=bool)

    ref = _const_metric(spec, 1.0, 1.0)
    g = _const_metric(spec, l1, l2)
    res = pinch_check(g, ref, eps, FakeGeo.interior)
    if res.passed:
        lo, hi = res.interval
        assert lo - 1e-12 <= res.eig_min and res.eig_max <= hi + 1e-12


def test_generalized_eigs_match_numpy(geo33):
    rng = np.random.default_rng(11)
    spec = geo33.spec
    c12g = 0.2 * (rng.normal() + 1j * rng.normal())
    c12r = 0.1 * (rng.normal() + 1j * rng.normal())
    g = HermitianMetricField(np.full(spec.shape, 2.0),
                             np.full(spec.shape, c12g),
                             np.full(spec.shape, 1.5), spec, "active", True)
    ref = HermitianMetricField(np.full(spec.shape, 1.2),
                               np.full(spec.shape, c12r),
                               np.full(spec.shape, 1.1), spec, "active", True)
    lam_min, lam_max = generalized_eigs(g, ref)
    import scipy.linalg as sla
    gm = np.array([[2.0, c12g], [np.conj(c12g), 1.5]])
    rm = np.array([[1.2, c12r], [np.conj(c12r), 1.1]])
    lams = np.sort(sla.eigvalsh(gm, rm))
    assert abs(lam_min[0, 0] - lams[0]) < 1e-12
    assert abs(lam_max[0, 0] - lams[1]) < 1e-12
