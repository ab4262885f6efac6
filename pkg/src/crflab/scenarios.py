"""Scenario construction: initial metrics, semi-flat form, reference family.

The total space is the trivial product (Bolza base) x (square torus fiber).
Initial metrics are built from invariant bumps so that every component field
is known analytically at reduced coordinates; ghost values of tensor
components are obtained by Moebius transport, never by interpolating tensors.

Scenario kinds
--------------
kahler_product      a*omega_E + omega_S (exact solution of the flow).
kahler_perturbed    adds i ddbar psi, psi an invariant bump on the base.
gauduchon_torsion   adds gamma = d beta_bar + dbar beta with beta = b(w) dz1;
                    d ddbar gamma = 0 identically, d gamma != 0.
fiber_inhomogeneous multiplies the fiber coefficient by
                    1 + amplitude * bump(w) * cos(2 pi x1)  (full mode only).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bolza import BaseGeometry, InvariantBump, ke_factor
from .errors import ConfigError, SingularMetricError
from .fields import (Form11Field, HermitianMetricField, RealScalarField,
                     TopFormField)
from .geom import (d1, d1d1bar, d2bar, d2d2bar_real, ddbar_scalar,
                   generalized_eigs, integrate_top, torsion, wedge)
from .grids import GridSpec

SCENARIO_KINDS = ("kahler_product", "kahler_perturbed", "gauduchon_torsion",
                  "fiber_inhomogeneous")

# Defaults keep the constructed metric comfortably admissible (minimum
# relative eigenvalue against the product metric above 0.5), validated in
# tests; the bump support margin admits grids down to 33^2.  The torsion
# scenario concentrates its bump: a compact |dbar b|^2 keeps the mean of the
# volume-form mismatch small against its oscillation, which is what makes the
# potential decay at a clean unit rate instead of the borderline (1+t)e^-t
# envelope.
DEFAULT_AMPLITUDES = {
    "kahler_product": 0.0,
    "kahler_perturbed": 0.06,
    "gauduchon_torsion": 0.05,
    "fiber_inhomogeneous": 0.3,
}
DEFAULT_BUMP_RADIUS = 1.1
DEFAULT_BUMP_RADIUS_BY_KIND = {"gauduchon_torsion": 0.65}

TI_SCAN_STEP = 1e-3
TI_SCAN_MAX = 20.0
TI_MARGIN = 1e-6


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "kahler_product"
    amplitude: float | None = None
    bump_center: complex = 0j
    bump_radius: float | None = None
    tau: complex = 1j
    fiber_scale: float = 1.0
    mode: str = "reduced"

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "fiber_inhomogeneous" and self.mode != "full":
            raise ConfigError("fiber_inhomogeneous requires full grid mode")
        if self.tau != 1j:
            raise ConfigError("only the square fiber lattice tau = i is supported")
        if self.fiber_scale <= 0:
            raise ConfigError("fiber_scale must be positive")
        if self.bump_radius is not None and self.bump_radius <= 0:
            raise ConfigError("bump_radius must be positive")

    @property
    def amp(self) -> float:
        return (DEFAULT_AMPLITUDES[self.kind]
                if self.amplitude is None else self.amplitude)

    @property
    def radius(self) -> float:
        if self.bump_radius is not None:
            return self.bump_radius
        return DEFAULT_BUMP_RADIUS_BY_KIND.get(self.kind, DEFAULT_BUMP_RADIUS)


@dataclass
class SemiFlatData:
    """Fiberwise flattening potential rho and the flat fiber coefficient."""
    rho: RealScalarField
    flat_fiber_coeff: np.ndarray     # per base point, constant along the fiber


@dataclass
class ReferenceFamily:
    """omega_flat, omega_S, Omega and the closed-form family omega_tilde(t)."""
    grid: GridSpec
    flat11: np.ndarray
    flat12: np.ndarray
    flat22: np.ndarray
    gS: np.ndarray                   # base-shaped KE coefficient
    omega_coeff: np.ndarray          # Omega = 2 omega_flat ^ omega_S
    T_I: float
    einstein_residual: float         # sup |Ric(Omega) + omega_S| on interior
    integral_ratio: float            # int Omega / (2 int omega0 ^ omega_S)
    w0_c11: np.ndarray = None        # initial metric, for the t < T_I guard
    w0_c12: np.ndarray = None
    w0_c22: np.ndarray = None

    def omega_S_form(self) -> Form11Field:
        gs = self.grid.broadcast_base(self.gS) * np.ones(self.grid.shape)
        return Form11Field(np.zeros(self.grid.shape),
                           np.zeros(self.grid.shape, dtype=complex),
                           gs, self.grid, "active")

    def flat_form(self) -> Form11Field:
        return Form11Field(self.flat11, self.flat12, self.flat22,
                           self.grid, "active")

    def form_at(self, t: float) -> Form11Field:
        """omega_tilde(t) = e^-t omega_flat + (1 - e^-t) omega_S.

        The last few times are memoized: the implicit stepper re-evaluates
        the family at a fixed target time many times per step.
        """
        cache = self.__dict__.setdefault("_form_cache", {})
        hit = cache.get(t)
        if hit is not None:
            return hit
        emt = np.exp(-t)
        gs = self.grid.broadcast_base(self.gS)
        out = Form11Field(emt * self.flat11, emt * self.flat12,
                          emt * self.flat22 + (1.0 - emt) * gs,
                          self.grid, "active")
        if len(cache) > 8:
            cache.clear()
        cache[t] = out
        return out

    def metric_at(self, t: float) -> HermitianMetricField:
        return HermitianMetricField.from_form(self.form_at(t), admissible=True)

    def guard_metric_at(self, t: float) -> HermitianMetricField:
        """Positive-definite comparison metric at any t >= 0.

        omega_tilde(t) for t >= T_I; below T_I the interpolation
        e^-t omega_0 + (1 - e^-t) omega_S, which is positive for all t.
        """
        if t >= self.T_I or self.w0_c11 is None:
            return self.metric_at(t)
        emt = np.exp(-t)
        gs = self.grid.broadcast_base(self.gS)
        return HermitianMetricField(
            emt * self.w0_c11, emt * self.w0_c12,
            emt * self.w0_c22 + (1.0 - emt) * gs * np.ones(self.grid.shape),
            self.grid, "active", admissible=True)


# ---------------------------------------------------------------------------
# initial metrics
# ---------------------------------------------------------------------------

def _base_to_grid(arr: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.mode == "reduced":
        return np.array(arr, copy=True)
    return np.broadcast_to(arr[:, :, None, None], grid.shape).copy()


@dataclass
class Scenario:
    """Initial data plus the analytic ingredients the reference family needs."""
    spec: ScenarioSpec
    grid: GridSpec
    geometry: BaseGeometry
    w0: HermitianMetricField
    flat11: np.ndarray
    flat12: np.ndarray
    flat22: np.ndarray
    gS: np.ndarray
    rho_analytic: np.ndarray | None   # closed-form rho on the grid (or None)
    bump: InvariantBump | None


def build_initial_metric(spec: ScenarioSpec, geometry: BaseGeometry,
                         grid: GridSpec) -> Scenario:
    """Construct the scenario's Gauduchon-type initial metric.

    Raises ConfigError when the requested amplitude breaks positive
    definiteness (reporting the minimum relative eigenvalue).
    """
    if grid.mode != spec.mode:
        raise ConfigError(
            f"scenario mode {spec.mode!r} does not match grid mode {grid.mode!r}")
    a = spec.fiber_scale
    amp = spec.amp
    gS_base = geometry.eval_invariant(ke_factor, (1, 1)).real
    shape = grid.shape
    g11 = np.full(shape, a)
    g12 = np.zeros(shape, dtype=complex)
    g22 = _base_to_grid(gS_base, grid)
    flat11 = g11.copy()
    flat12 = np.zeros(shape, dtype=complex)
    flat22 = g22.copy()
    rho_analytic = None
    bump = None

    if spec.kind != "kahler_product" and amp != 0.0:
        bump = InvariantBump(spec.bump_center, spec.radius, amp)
        bump.validate_support(geometry)

    if spec.kind == "kahler_perturbed" and bump is not None:
        dd = geometry.eval_invariant(bump.ddbar, (1, 1)).real
        g22 = g22 + _base_to_grid(dd, grid)
        flat22 = g22.copy()
    elif spec.kind == "gauduchon_torsion" and bump is not None:
        # gamma = d beta_bar + dbar beta, beta = b dz1: only the 1 2bar entry.
        g12 = g12 + _base_to_grid(
            1j * geometry.eval_invariant(bump.dbar, (0, 1)), grid)
        flat12 = g12.copy()
    elif spec.kind == "fiber_inhomogeneous" and bump is not None:
        fx, _ = grid.fiber_points()
        cosx = np.cos(2.0 * np.pi * fx)
        sinx = np.sin(2.0 * np.pi * fx)
        bval = geometry.eval_invariant(bump.value, (0, 0)).real
        bdbar = geometry.eval_invariant(bump.dbar, (0, 1))
        bdd = geometry.eval_invariant(bump.ddbar, (1, 1)).real
        # bump^2 pieces for the normalization shift of rho
        b2dd = geometry.eval_invariant(
            lambda w: 2.0 * bump.value(w) * bump.ddbar(w)
            + 2.0 * np.abs(bump.dbar(w)) ** 2, (1, 1)).real
        g11 = a * (1.0 + bval[:, :, None, None] * cosx[None, None, :, :])
        pi2 = np.pi ** 2
        rho_analytic = (a / pi2 * bval[:, :, None, None] * cosx[None, None, :, :]
                        - a / (2.0 * pi2) * (bval ** 2)[:, :, None, None]
                        * np.ones_like(cosx)[None, None, :, :])
        # omega_flat = omega0 + i ddbar rho, in closed form:
        flat11 = np.full(shape, a)
        flat12 = (-(a / np.pi) * bdbar[:, :, None, None]
                  * sinx[None, None, :, :]).astype(complex)
        flat22 = g22 + (a / pi2 * bdd[:, :, None, None] * cosx[None, None, :, :]
                        - a / (2.0 * pi2) * b2dd[:, :, None, None]
                        * np.ones_like(cosx)[None, None, :, :])

    w0 = HermitianMetricField(g11, g12, g22, grid, "active", admissible=False)
    ref = HermitianMetricField(np.full(shape, a),
                               np.zeros(shape, dtype=complex),
                               _base_to_grid(gS_base, grid), grid, "active",
                               admissible=True)
    act = geometry.active
    lam_min, _ = generalized_eigs(w0, ref)
    min_eig = float(np.min(lam_min[act]))
    if min_eig <= 0:
        raise ConfigError(
            f"scenario amplitude {amp} breaks admissibility: "
            f"min relative eigenvalue {min_eig:.4f}")
    w0.admissible = True
    return Scenario(spec, grid, geometry, w0, flat11, flat12, flat22,
                    gS_base, rho_analytic, bump)


# ---------------------------------------------------------------------------
# Gauduchon verification
# ---------------------------------------------------------------------------

def verify_gauduchon(w0: Form11Field, geometry: BaseGeometry
                     ) -> tuple[float, float]:
    """(sup |i ddbar omega0| coefficient, d-closedness measure).

    The second number is the sup of the lowered-torsion components; it
    vanishes (to FD tolerance) exactly for Kaehler data.
    """
    w0.require_active("verify_gauduchon")
    spec = w0.grid
    g21 = np.conj(w0.c12)
    coeff = (d1d1bar(w0.c22 + 0j, spec).real
             + d2d2bar_real(np.real(w0.c11), spec)
             - 2.0 * np.real(d1(d2bar(g21, spec), spec)))
    mask = geometry.interior
    dd_norm = float(np.max(np.abs(coeff[mask])))
    t = torsion(w0)
    d_norm = float(max(np.max(np.abs(t.t1[mask])), np.max(np.abs(t.t2[mask]))))
    return dd_norm, d_norm


# ---------------------------------------------------------------------------
# semi-flat solve
# ---------------------------------------------------------------------------

def solve_semiflat(w0: HermitianMetricField, grid: GridSpec,
                   geometry: BaseGeometry) -> SemiFlatData:
    """Fiberwise flattening: solve d1 d1bar rho_y = c_y - h_y on each torus.

    h_y is the fiber coefficient of omega0 over the base point y and c_y its
    fiber mean; rho_y is then shifted so the omega0-weighted fiber integral of
    rho vanishes.  Fiber-constant input returns rho = 0 exactly.
    """
    h = np.asarray(w0.c11, dtype=float)
    if np.any(h[geometry.active] <= 0):
        raise SingularMetricError("fiber coefficient must be positive")
    if grid.mode == "reduced":
        rho = RealScalarField(np.zeros(grid.shape), grid, "active")
        return SemiFlatData(rho, h.copy())
    import scipy.fft as sfft
    kx, ky = grid.fiber_wavenumbers()
    sym = -0.25 * (kx ** 2 + ky ** 2)
    hhat = sfft.fft2(h, axes=(2, 3), workers=2)
    c = hhat[:, :, 0, 0].real / (grid.fiber_nx * grid.fiber_ny)
    rhs_hat = -hhat
    rhs_hat[:, :, 0, 0] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        rho_hat = np.where(sym != 0.0, rhs_hat / sym, 0.0)
    rho = sfft.ifft2(rho_hat, axes=(2, 3), workers=2).real
    weight = np.sum(rho * h, axis=(2, 3)) / np.sum(h, axis=(2, 3))
    rho = rho - weight[:, :, None, None]
    return SemiFlatData(RealScalarField(rho, grid, "active"),
                        np.broadcast_to(c[:, :, None, None], grid.shape).copy())


# ---------------------------------------------------------------------------
# reference family
# ---------------------------------------------------------------------------

def build_reference(scenario: Scenario, semiflat: SemiFlatData
                    ) -> ReferenceFamily:
    """Assemble omega_flat, omega_S, Omega = 2 omega_flat ^ omega_S and T_I.

    Interior values of omega_flat are the discrete omega_0 + i ddbar rho, so
    the initial condition phi(0) = -rho reproduces omega_0 exactly at every
    interior point; ghost values come from the scenario's analytic transport
    (the two agree to O(h^2)).  Also evaluates the Einstein residual
    sup |Ric(Omega) + omega_S| and the integral normalization ratio; both are
    stored for the caller to assert (the residual detects non-Gauduchon-type
    starts instead of aborting).
    """
    grid, geometry = scenario.grid, scenario.geometry
    flat11 = scenario.flat11.copy()
    flat12 = scenario.flat12.copy()
    flat22 = scenario.flat22.copy()
    if np.max(np.abs(semiflat.rho.values)) > 0.0:
        dd = ddbar_scalar(semiflat.rho)
        sel = geometry.interior
        flat11[sel] = (scenario.w0.c11 + dd.c11)[sel]
        flat12[sel] = (scenario.w0.c12 + dd.c12)[sel]
        flat22[sel] = (scenario.w0.c22 + dd.c22)[sel]
    flat = Form11Field(flat11, flat12, flat22, grid, "active")
    gs = grid.broadcast_base(scenario.gS) * np.ones(grid.shape)
    omega_s = Form11Field(np.zeros(grid.shape),
                          np.zeros(grid.shape, dtype=complex), gs, grid,
                          "active")
    omega = wedge(flat, omega_s)
    omega_coeff = 2.0 * omega.coeff
    act = geometry.active
    if np.any(omega_coeff[act] <= 0):
        raise ConfigError("volume form Omega is not positive on the grid")

    # Einstein residual of the volume form: Ric(Omega) + omega_S -> 0
    if grid.mode == "full":
        safe = np.where(act[:, :, None, None], omega_coeff, 1.0)
    else:
        safe = np.where(act, omega_coeff, 1.0)
    logom = RealScalarField(np.log(safe), grid, "active")
    dd = ddbar_scalar(logom)
    mask = geometry.interior
    res = max(
        float(np.max(np.abs(dd.c11[mask]))),
        float(np.max(np.abs(dd.c12[mask]))),
        float(np.max(np.abs(-dd.c22[mask] + gs[mask]))),
    )

    # integral normalization against 2 int omega0 ^ omega_S
    w0_wedge = wedge(scenario.w0, omega_s)
    num = integrate_top(TopFormField(omega_coeff, grid), geometry)
    den = 2.0 * integrate_top(w0_wedge, geometry)
    ratio = num / den if den != 0 else np.inf

    ti = compute_TI(flat11, flat12, flat22,
                    grid.broadcast_base(scenario.gS) * np.ones(grid.shape),
                    act)
    return ReferenceFamily(grid, flat11, flat12, flat22, scenario.gS.copy(),
                           omega_coeff, ti, res, ratio,
                           w0_c11=scenario.w0.c11.copy(),
                           w0_c12=scenario.w0.c12.copy(),
                           w0_c22=scenario.w0.c22.copy())


def compute_TI(flat11, flat12, flat22, gs, active_mask,
               step: float = TI_SCAN_STEP, t_max: float = TI_SCAN_MAX,
               margin: float = TI_MARGIN) -> float:
    """Smallest time on the step-1e-3 grid after which omega_tilde(t) stays
    positive definite with the safety margin.

    Positivity of omega_tilde(t) for all later times reduces to three
    conditions affine in s = e^-t: flat11 >= margin (t-independent),
    c22(t) = g + s (f22 - g) >= margin and e^t det(t) = f11 g + s (f11 f22 -
    f11 g - |f12|^2) >= margin; each point's last failing time is solved in
    closed form and the result snapped up to the scan grid.
    """
    f11 = flat11[active_mask].ravel()
    f12 = flat12[active_mask].ravel()
    f22 = flat22[active_mask].ravel()
    if gs.shape == flat11.shape:
        g = gs[active_mask].ravel()
    else:
        g = np.broadcast_to(gs, flat11.shape)[active_mask].ravel()
    if np.min(f11) < margin:
        raise ConfigError("omega_flat fiber coefficient not positive; "
                          "no admissible reference family")
    if np.min(g) <= margin:
        raise ConfigError("base reference metric degenerate")

    def last_fail(const, slope):
        # const + s*slope >= margin fails for s > (const - margin)/(-slope)
        t_star = np.zeros_like(const)
        bad = slope < -(const - margin)
        if np.any(const[bad] <= margin):
            raise ConfigError("reference family never becomes positive definite")
        s_star = np.where(bad, (const - margin) / np.maximum(-slope, 1e-300),
                          1.0)
        t_star[bad] = -np.log(s_star[bad])
        return t_star

    t1 = last_fail(g, f22 - g)
    t2 = last_fail(f11 * g, f11 * f22 - f11 * g - np.abs(f12) ** 2)
    t_raw = float(max(np.max(t1), np.max(t2), 0.0))
    if t_raw > t_max:
        raise ConfigError("reference family positivity time exceeds the scan range")
    return step * np.ceil(t_raw / step - 1e-12) if t_raw > 0 else 0.0
