"""Fuchsian group, fundamental domain, ghost machinery and invariant fields."""
import numpy as np
import pytest

from crflab.bolza import (BaseGeometry, InvariantBump, MobiusMap,
                          OrbitGaussianScalar, build_bolza, domain_reduce,
                          hyperbolic_distance, ke_factor,
                          octagon_vertex_radius)
from crflab.errors import ConfigError
from crflab.fields import HermitianMetricField
from crflab.geom import chern_ricci
from crflab.grids import GridSpec


def test_relation_residual(group):
    assert group.relation_residual() <= 1e-12


def test_generator_inverses(group):
    for name, g in group.generators.items():
        prod = (g @ g.inverse()).residual_to_identity()
        assert prod <= 1e-12, name
    for t in group.side_pairings:
        assert (t @ t.inverse()).residual_to_identity() <= 1e-12


def test_vertex_radius_angle_condition(group):
    rv = group.vertex_radius
    assert 0.8 < rv < 0.9
    # the root solves the octagon angle condition: half interior angle pi/8
    cosh_r = (1 + rv ** 2) / (1 - rv ** 2)
    beta = np.arctan(1.0 / (cosh_r * np.tan(np.pi / 8)))
    assert abs(beta - np.pi / 8) < 1e-13
    assert abs(octagon_vertex_radius() - rv) < 1e-13


def test_side_pairing_maps_sides(group):
    """side_pairings[k] carries side k+4 onto side k (midpoint and ends)."""
    centers, crad = group.side_circles()
    e_mid = np.tanh(group.apothem / 2.0)
    rv = group.vertex_radius
    verts = rv * np.exp(1j * (2 * np.arange(8) + 1) * np.pi / 8)
    for k in range(4):
        t = group.side_pairings[k]
        mid_from = e_mid * np.exp(1j * (k + 4) * np.pi / 4)
        mid_to = e_mid * np.exp(1j * k * np.pi / 4)
        assert abs(t.apply(mid_from) - mid_to) < 1e-12
        # endpoint set of side k+4 maps onto endpoint set of side k
        ends_from = [verts[(k + 3) % 8], verts[(k + 4) % 8]]
        ends_to = {(k + 7) % 8, k % 8}
        for e in ends_from:
            img = t.apply(e)
            assert min(abs(img - verts[j]) for j in ends_to) < 1e-12


def test_generators_are_isometries(group):
    rng = np.random.default_rng(5)
    pts = 0.9 * np.sqrt(rng.random(100)) * np.exp(2j * np.pi * rng.random(100))
    for g in list(group.generators.values()) + list(group.side_pairings):
        img = g.apply(pts)
        assert np.all(np.abs(img) < 1.0)
        pullback = ke_factor(img) * np.abs(g.deriv(pts)) ** 2
        rel = np.abs(pullback - ke_factor(pts)) / ke_factor(pts)
        assert np.max(rel) < 1e-10


def test_domain_reduce_basic(group):
    w0 = 0.1 + 0.05j
    w, word = domain_reduce(w0, group)
    assert w == w0 and word == []
    # apply-then-invert round trip through a generator
    a1 = group.a1
    w_out = a1.apply(w0)
    w_back, word = domain_reduce(w_out, group)
    assert abs(w_back - w0) < 1e-12
    assert len(word) >= 1
    # idempotence
    w2, word2 = domain_reduce(w_back, group)
    assert w2 == w_back and word2 == []


def test_domain_reduce_terminates_everywhere(group):
    rng = np.random.default_rng(1)
    for _ in range(500):
        w = 0.97 * np.sqrt(rng.random()) * np.exp(2j * np.pi * rng.random())
        wr, word = domain_reduce(w, group)
        assert len(word) <= 64
        centers, crad = group.side_circles()
        assert np.all(np.abs(wr - centers) >= crad - 1e-9)


def test_classification_counts(geo65):
    assert 2000 <= geo65.n_interior <= 4200
    # deterministic rebuild
    geo2 = BaseGeometry(GridSpec(base_nx=65, base_ny=65), geo65.group)
    assert np.array_equal(geo2.interior, geo65.interior)
    assert np.array_equal(geo2.ghost, geo65.ghost)
    assert np.allclose(geo2.targets, geo65.targets)


def test_ghost_targets_inside_and_words(geo65):
    centers, crad = geo65.group.side_circles()
    for t in geo65.targets:
        assert np.all(np.abs(t - centers) >= crad - 1e-9)
    assert max(len(w) for w in geo65.words) <= 64


def test_stencil_partition_of_unity(geo65):
    """Filling the constant 1 gives ghosts exactly 1 (weights sum to one,
    including through ghost-chain resolution)."""
    f = np.zeros(geo65.spec.shape)
    f[geo65.interior] = 1.0
    filled = geo65.fill(f)
    assert np.max(np.abs(filled[geo65.ghost] - 1.0)) < 1e-11


def test_interior_stencils_avoid_exterior(geo65):
    act = geo65.active
    iy, ix = np.nonzero(geo65.interior)
    n = geo65.spec.base_nx
    for dy in (-2, -1, 0, 1, 2):
        for dx in (-2, -1, 0, 1, 2):
            assert np.all(act[iy + dy, ix + dx])


def test_ghost_fill_invariant_order(group):
    """Round-trip error of a G-invariant analytic scalar; measured order
    >= 2.7 under grid halving."""
    fn = OrbitGaussianScalar(group, width=1.0, word_length=4)
    errs = []
    for n in (65, 129):
        geo = BaseGeometry(GridSpec(base_nx=n, base_ny=n), group)
        f = np.zeros(geo.spec.shape)
        f[geo.interior] = fn.value(geo.w[geo.interior])
        filled = geo.fill(f)
        exact = fn.value(geo.w[geo.ghost])
        errs.append(np.max(np.abs(filled[geo.ghost] - exact)))
    order = np.log2(errs[0] / errs[1])
    assert order >= 2.7


def test_ke_metric_values_and_invariance(geo65, group):
    gs = geo65.eval_invariant(ke_factor, (1, 1)).real
    iy, ix = 32, 32   # w = 0 on the 65^2 grid
    assert abs(geo65.w[iy, ix]) < 1e-14
    assert abs(gs[iy, ix] - 2.0) < 1e-14
    # invariance: ghost values match the analytic factor (Moebius transport)
    direct = ke_factor(geo65.w[geo65.ghost])
    assert np.max(np.abs(gs[geo65.ghost] - direct) / direct) < 1e-10


def test_ke_einstein_residual_order(group, geo65, geo129):
    sups = []
    for geo in (geo65, geo129):
        spec = geo.spec
        gs = geo.eval_invariant(ke_factor, (1, 1)).real
        g = HermitianMetricField(np.ones(spec.shape),
                                 np.zeros(spec.shape, complex), gs, spec,
                                 "active", admissible=True)
        ric = chern_ricci(g, geo.active)
        rel = np.abs(ric.c22 + gs) / gs
        sups.append(np.max(rel[geo.interior]))
    assert 3.0 < sups[0] / sups[1] < 5.0


def test_invariant_bump_values(geo65):
    bump = InvariantBump(0j, 1.1, 0.25)
    bump.validate_support(geo65)
    assert abs(bump.value(np.array([0j]))[0] - 0.25) < 1e-14
    # vanishes on the octagon boundary (apothem 1.5286 > radius)
    e_mid = np.tanh(geo65.group.apothem / 2.0)
    assert bump.value(np.array([e_mid + 0j]))[0] == 0.0
    # ghost ring values vanish by the support margin
    vals = geo65.eval_invariant(bump.value, (0, 0)).real
    assert np.max(np.abs(vals[geo65.ghost])) == 0.0


def test_invariant_bump_margin_violation(geo33):
    bump = InvariantBump(0j, 1.45, 0.1)
    with pytest.raises(ConfigError):
        bump.validate_support(geo33)


def test_invariant_bump_derivatives_fd():
    bump = InvariantBump(0.1 + 0.05j, 1.0, 0.3)
    w0 = np.array([0.23 + 0.31j])
    eps = 1e-5

    def val(z):
        return bump.value(np.array([z]))[0]

    num_dd = (val(w0[0] + eps) + val(w0[0] - eps) + val(w0[0] + 1j * eps)
              + val(w0[0] - 1j * eps) - 4 * val(w0[0])) / (4 * eps ** 2)
    assert abs(num_dd - bump.ddbar(w0)[0]) < 1e-5
    num_dbar = ((val(w0[0] + eps) - val(w0[0] - eps)) / (2 * eps)
                + 1j * (val(w0[0] + 1j * eps) - val(w0[0] - 1j * eps))
                / (2 * eps)) / 2
    assert abs(num_dbar - bump.dbar(w0)[0]) < 1e-6


def test_invariant_bump_smoothness_proxy(group):
    """Fourth finite differences of the profile stay bounded under
    refinement (no derivative jumps at the support edge)."""
    bump = InvariantBump(0j, 1.0, 1.0)
    prev = None
    for n in (201, 401, 801):
        xs = np.linspace(-0.6, 0.6, n)
        h = xs[1] - xs[0]
        vals = bump.value(xs.astype(complex))
        d4 = np.abs(np.diff(vals, 4)) / h ** 4
        m = np.max(d4)
        if prev is not None:
            assert m < 1.6 * prev + 1.0
        prev = m


def test_hyperbolic_distance_helper():
    assert abs(hyperbolic_distance(0.5, 0.0) - 2 * np.arctanh(0.5)) < 1e-14
    assert hyperbolic_distance(0.3 + 0.1j, 0.3 + 0.1j) == 0.0


def test_mobius_map_det_normalized(group):
    for g in group.generator_list():
        assert abs(np.linalg.det(g.mat) - 1.0) < 1e-12
