"""Discrete complex-differential-geometry kernel.

Base derivatives are second-order central differences in x2, y2 with
d2 = (d_x2 - i d_y2)/2; fiber derivatives are Fourier-spectral on the periodic
unit cell (exactly zero in reduced mode).  Outputs of derivative operators are
valid at interior points (stencils read the ghost ring); callers that need
derivatives of quantities only known on the interior must restrict to eroded
masks themselves.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import OutOfRegimeError, SingularMetricError
from .fields import (Form11Field, HermitianMetricField, RealScalarField,
                     TopFormField, TorsionField)
from .grids import GridSpec

PINCH_EPS_MAX = 0.05


# ---------------------------------------------------------------------------
# low-level derivative helpers (raw arrays)
# ---------------------------------------------------------------------------

def dx_base(a: np.ndarray, spec: GridSpec) -> np.ndarray:
    out = np.empty_like(a)
    out[:, 0] = 0.0
    out[:, -1] = 0.0
    np.subtract(a[:, 2:], a[:, :-2], out=out[:, 1:-1])
    out[:, 1:-1] /= 2.0 * spec.h_bx
    return out

def dy_base(a: np.ndarray, spec: GridSpec) -> np.ndarray:
    out = np.empty_like(a)
    out[0] = 0.0
    out[-1] = 0.0
    np.subtract(a[2:], a[:-2], out=out[1:-1])
    out[1:-1] /= 2.0 * spec.h_by
    return out

def d2(a: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Holomorphic base derivative d/dz2 = (d_x2 - i d_y2)/2."""
    return 0.5 * (dx_base(a, spec) - 1j * dy_base(a, spec))

def d2bar(a: np.ndarray, spec: GridSpec) -> np.ndarray:
    return 0.5 * (dx_base(a, spec) + 1j * dy_base(a, spec))

def d2d2bar_real(a: np.ndarray, spec: GridSpec) -> np.ndarray:
    """d2 d2bar of a real array: quarter of the 5-point Laplacian."""
    out = np.zeros_like(a)
    core = out[1:-1, 1:-1]
    np.add(a[1:-1, 2:], a[1:-1, :-2], out=core)
    core -= 2.0 * a[1:-1, 1:-1]
    core /= spec.h_bx ** 2
    tmp = a[2:, 1:-1] + a[:-2, 1:-1]
    tmp -= 2.0 * a[1:-1, 1:-1]
    tmp /= spec.h_by ** 2
    core += tmp
    core *= 0.25
    return out


def _fiber_symbols(spec: GridSpec):
    kx, ky = spec.fiber_wavenumbers()
    return 0.5 * (1j * kx + ky), 0.5 * (1j * kx - ky), -0.25 * (kx ** 2 + ky ** 2)


def _fft2(a):
    return sfft.fft2(a, axes=(-2, -1), workers=2)

def _ifft2(a):
    return sfft.ifft2(a, axes=(-2, -1), workers=2)

def d1(a: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Fiber derivative d/dz1, spectral; zero in reduced mode."""
    if spec.mode == "reduced":
        return np.zeros(a.shape, dtype=complex)
    s1, _, _ = _fiber_symbols(spec)
    return _ifft2(s1 * _fft2(a))

def d1bar(a: np.ndarray, spec: GridSpec) -> np.ndarray:
    if spec.mode == "reduced":
        return np.zeros(a.shape, dtype=complex)
    _, s1b, _ = _fiber_symbols(spec)
    return _ifft2(s1b * _fft2(a))

def d1d1bar(a: np.ndarray, spec: GridSpec) -> np.ndarray:
    if spec.mode == "reduced":
        return np.zeros_like(a)
    _, _, s11 = _fiber_symbols(spec)
    out = _ifft2(s11 * _fft2(a))
    return out.real if np.isrealobj(a) else out


# ---------------------------------------------------------------------------
# kernel operations
# ---------------------------------------------------------------------------

def ddbar_scalar(f: RealScalarField) -> Form11Field:
    """i ddbar of a real scalar as a (1,1) form (second-order accurate).

    Full mode uses one forward fiber transform for both the fiber Hessian and
    the mixed derivative (the base difference commutes with the fiber
    spectral derivative).
    """
    f.require_active("ddbar_scalar")
    spec = f.grid
    a = f.values
    c22 = d2d2bar_real(a, spec)
    if spec.mode == "reduced":
        c11 = np.zeros_like(a)
        c12 = np.zeros_like(a, dtype=complex)
    elif np.isrealobj(a):
        # real input: half-spectrum transforms; for real a the fiber
        # derivative splits as Re d1 a = d_x1 a / 2, Im d1 a = -d_y1 a / 2
        kx, ky = spec.fiber_wavenumbers()
        nHalf = spec.fiber_nx // 2 + 1
        kxh, kyh = kx[:, :nHalf], ky[:, :nHalf]
        ahat = sfft.rfft2(a, axes=(-2, -1), workers=2)
        shape = a.shape[-2:]
        c11 = sfft.irfft2(-0.25 * (kxh ** 2 + kyh ** 2) * ahat, s=shape,
                          axes=(-2, -1), workers=2)
        re1 = sfft.irfft2(0.5j * kxh * ahat, s=shape, axes=(-2, -1),
                          workers=2)
        im1 = sfft.irfft2(-0.5j * kyh * ahat, s=shape, axes=(-2, -1),
                          workers=2)
        c12 = d2bar(re1 + 1j * im1, spec)
    else:
        s1, _, s11 = _fiber_symbols(spec)
        ahat = _fft2(a)
        c11 = _ifft2(s11 * ahat).real
        c12 = d2bar(_ifft2(s1 * ahat), spec)
    return Form11Field(c11, c12, c22, spec, "interior")


def christoffels(g: HermitianMetricField) -> np.ndarray:
    """Chern-connection coefficients Gamma^k_{ij} = g^{k qbar} d_i g_{j qbar}.

    Returns a complex array of shape (2, 2, 2) + grid shape indexed
    [k-1, i-1, j-1]; valid where first-derivative stencils stay active.
    """
    if not g.admissible:
        raise SingularMetricError("christoffels needs an admissible metric")
    spec = g.grid
    comp = {(1, 1): g.c11 + 0j, (1, 2): g.c12,
            (2, 1): np.conj(g.c12), (2, 2): g.c22 + 0j}
    dcomp = {}
    for (j, q), arr in comp.items():
        dcomp[(1, j, q)] = d1(arr, spec)
        dcomp[(2, j, q)] = d2(arr, spec)
    inv11, inv12, inv22 = g.inverse_components()
    inv = {(1, 1): inv11 + 0j, (1, 2): inv12,
           (2, 1): np.conj(inv12), (2, 2): inv22 + 0j}
    out = np.zeros((2, 2, 2) + spec.shape, dtype=complex)
    for k in (1, 2):
        for i in (1, 2):
            for j in (1, 2):
                acc = 0.0
                for q in (1, 2):
                    acc = acc + inv[(k, q)] * dcomp[(i, j, q)]
                out[k - 1, i - 1, j - 1] = acc
    return out


def torsion(g: HermitianMetricField | Form11Field) -> TorsionField:
    """Lowered Chern torsion T_{i j lbar} = d_i g_{j lbar} - d_j g_{i lbar}."""
    spec = g.grid
    g21 = np.conj(g.c12)
    t1 = d1(g21, spec) - d2(g.c11 + 0j, spec)
    t2 = d1(g.c22 + 0j, spec) - d2(g.c12, spec)
    return TorsionField(t1, t2, spec)


def chern_ricci(g: HermitianMetricField, mask: np.ndarray | None = None
                ) -> Form11Field:
    """Chern-Ricci form: -i ddbar log det g.

    ``mask`` marks the points where the metric is meaningful (active points);
    outside it the determinant is replaced by 1 before taking the log, so
    junk values beyond the grid's active region cannot poison the output.
    """
    g.require_active("chern_ricci")
    det = g.det()
    if mask is None:
        mask = np.ones(det.shape, dtype=bool)
    checked = det[mask]
    if checked.size and np.min(checked) <= 0:
        raise SingularMetricError(
            f"chern_ricci: det has min {float(np.min(checked)):.3e} on the mask")
    safe = np.where(mask & (det > 0), det, 1.0)
    logdet = RealScalarField(np.log(safe), g.grid, "active")
    dd = ddbar_scalar(logdet)
    return Form11Field(-dd.c11, -dd.c12, -dd.c22, g.grid, "interior")


def trace_form(g: HermitianMetricField, a: Form11Field) -> RealScalarField:
    """tr_omega alpha = g^{i jbar} a_{i jbar}."""
    inv11, inv12, inv22 = g.inverse_components()
    tr = inv11 * a.c11 + inv22 * a.c22 + 2.0 * np.real(inv12 * a.c12)
    return RealScalarField(tr, g.grid, g.ghost_state
                           if a.ghost_state == "active" else "interior")


def chern_scalar(g: HermitianMetricField, mask: np.ndarray | None = None
                 ) -> RealScalarField:
    return trace_form(g, chern_ricci(g, mask))


def wedge(a: Form11Field, b: Form11Field) -> TopFormField:
    coeff = (a.c11 * b.c22 + a.c22 * b.c11
             - 2.0 * np.real(a.c12 * np.conj(b.c12)))
    return TopFormField(coeff, a.grid)


def laplacian(g: HermitianMetricField, f: RealScalarField) -> RealScalarField:
    """Complex Laplacian g^{i jbar} d_i d_jbar f."""
    return trace_form(g, ddbar_scalar(f))


def grad_norm_sq(g: HermitianMetricField, f: RealScalarField) -> RealScalarField:
    """|nabla f|^2_g = g^{i jbar} d_i f d_jbar f for a real scalar."""
    f.require_active("grad_norm_sq")
    spec = f.grid
    df1 = d1(f.values + 0j, spec)
    df2 = d2(f.values + 0j, spec)
    inv11, inv12, inv22 = g.inverse_components()
    val = (inv11 * np.abs(df1) ** 2 + inv22 * np.abs(df2) ** 2
           + 2.0 * np.real(inv12 * df1 * np.conj(df2)))
    return RealScalarField(val.real, spec, "interior")


def tensor_norm(t: TorsionField, g: HermitianMetricField) -> RealScalarField:
    """|T|^2_g with the full contraction
    g^{i jbar} g^{k lbar} g^{p qbar} T_{i k qbar} conj(T_{j l pbar})."""
    det = g.det()
    inv11, inv12, inv22 = g.inverse_components()
    quad = (inv11 * np.abs(t.t1) ** 2 + inv22 * np.abs(t.t2) ** 2
            + 2.0 * np.real(inv12 * t.t2 * np.conj(t.t1)))
    return RealScalarField(2.0 / det * quad.real, g.grid, "interior")


def generalized_eigs(g: Form11Field, ref: HermitianMetricField):
    """Eigenvalues of g relative to ref (roots of det(g - lam ref)), pointwise."""
    det_r = ref.det()
    det_g = g.c11 * g.c22 - np.abs(g.c12) ** 2
    mixed = (g.c11 * ref.c22 + g.c22 * ref.c11
             - 2.0 * np.real(g.c12 * np.conj(ref.c12)))
    disc = np.sqrt(np.maximum(mixed ** 2 - 4.0 * det_r * det_g, 0.0))
    lam_min = (mixed - disc) / (2.0 * det_r)
    lam_max = (mixed + disc) / (2.0 * det_r)
    return lam_min, lam_max


@dataclass
class PinchResult:
    passed: bool
    interval: tuple[float, float]
    point_pass: np.ndarray
    eig_min: float
    eig_max: float
    trace_excess: float


def pinch_check(g: HermitianMetricField, g_ref: HermitianMetricField,
                eps: float, mask: np.ndarray) -> PinchResult:
    """Certify relative eigenvalue pinching from the two trace conditions.

    If tr_ref(g) - 2 <= eps and tr_g(ref) - 2 <= eps hold pointwise (on the
    masked points), the relative eigenvalues are certified to lie inside
    [1 - 2 sqrt(eps), 1 + 2 sqrt(eps)]; exact generalized eigenvalues are
    evaluated alongside for comparison.
    """
    if eps >= PINCH_EPS_MAX:
        raise OutOfRegimeError(
            f"pinch_check assumes small eps; got {eps} >= {PINCH_EPS_MAX}")
    if eps <= 0:
        raise OutOfRegimeError("pinch_check needs eps > 0")
    tr_ref_g = trace_form(g_ref, g).values
    tr_g_ref = trace_form(HermitianMetricField.from_form(g, admissible=True),
                          g_ref).values
    point_pass = (tr_ref_g - 2.0 <= eps) & (tr_g_ref - 2.0 <= eps)
    lam_min, lam_max = generalized_eigs(g, g_ref)
    ok = bool(np.all(point_pass[mask]))
    excess = float(np.max(np.maximum(tr_ref_g - 2.0, tr_g_ref - 2.0)[mask]))
    root = 2.0 * np.sqrt(eps)
    return PinchResult(
        passed=ok,
        interval=(1.0 - root, 1.0 + root),
        point_pass=point_pass,
        eig_min=float(np.min(lam_min[mask])),
        eig_max=float(np.max(lam_max[mask])),
        trace_excess=excess,
    )


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def integrate_top(top: TopFormField, geometry) -> float:
    """Integral over M: midpoint rule on interior points, fiber cell summed
    exactly (reduced mode uses the unit fiber area analytically)."""
    spec = top.grid
    cell = 4.0 * spec.h_bx * spec.h_by
    if spec.mode == "reduced":
        return float(np.sum(top.coeff[geometry.interior]) * cell)
    per_base = np.sum(top.coeff, axis=(2, 3)) * spec.fiber_cell_volume()
    return float(np.sum(per_base[geometry.interior]) * cell)


def fiber_mean(arr: np.ndarray, spec: GridSpec) -> np.ndarray:
    if spec.mode == "reduced":
        return arr
    return np.mean(arr, axis=(2, 3))
