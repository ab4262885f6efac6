"""Monitored quantities, decay-rate fitting and theorem pass/fail reports.

Every theorem of the underlying convergence theory is turned into a
measurable statistic of the run: potential decay, trace pinching, the scalar
curvature window, reference torsion/curvature scalings, the Calabi quantity
on an interior chart, fiber collapse and the Gromov-Hausdorff proxy.
"""
from __future__ import annotations

from dataclasses import dataclass, fields as dc_fields

import numpy as np

from .errors import ConfigError, InsufficientDataError
from .fields import (Form11Field, HermitianMetricField, RealScalarField,
                     TorsionField)
from .flow import FlowState, ma_rhs
from .geom import (d1, d1bar, d1d1bar, d2bar, d2d2bar_real, christoffels,
                   generalized_eigs, grad_norm_sq, laplacian, tensor_norm,
                   torsion, trace_form)
from .grids import GridSpec
from .scenarios import ReferenceFamily, Scenario

LOG_CLAMP = 1e-14
CHART_V_HALF_WIDTH = 0.35
CHART_V_MARGIN = 4


@dataclass
class DiagnosticsRecord:
    t: float
    sup_phi: float
    sup_phidot: float
    sup_u: float
    sup_grad_u_sq: float
    tr_ref_omega_minus2_max: float
    tr_omega_ref_minus2_max: float
    R_min: float
    R_max: float
    torsion_ref_norm_max: float
    dbar_torsion_scaled: float
    calabi_S_max: float
    fiber_diam_max: float
    fiber_c1_max: float
    gh_proxy: float
    vol_ratio_min: float
    vol_ratio_max: float
    admissibility_min: float
    gauduchon_drift: float

    @classmethod
    def column_names(cls) -> list[str]:
        return [f.name for f in dc_fields(cls)]

    def row(self) -> list[float]:
        return [getattr(self, name) for name in self.column_names()]


@dataclass
class PinchSample:
    """Per-record metric-pinching audit for the eigenvalue lemma."""
    t: float
    trace_excess: float
    eig_min: float
    eig_max: float
    certified_low: float
    certified_high: float
    sound: bool


@dataclass
class RateFit:
    window: tuple[float, float]
    slope: float
    intercept: float
    r_squared: float


@dataclass
class CheckResult:
    name: str
    bound: str
    observed: float
    margin: float
    passed: bool


@dataclass
class TheoremReport:
    checks: list[CheckResult]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {c.name: {"bound": c.bound, "observed": c.observed,
                         "margin": c.margin, "pass": c.passed}
                for c in self.checks}


# ---------------------------------------------------------------------------
# helper context shared by the per-snapshot diagnostics
# ---------------------------------------------------------------------------

class DiagnosticsContext:
    """Precomputed masks and reference tensors for snapshot evaluation."""

    def __init__(self, scenario: Scenario, fam: ReferenceFamily):
        self.scenario = scenario
        self.fam = fam
        self.grid = scenario.grid
        self.geometry = scenario.geometry
        geo = self.geometry
        self.interior = geo.interior
        self.drift_mask = geo.eroded_interior(1)
        w = geo.w
        square = (np.abs(w.real) <= CHART_V_HALF_WIDTH) \
            & (np.abs(w.imag) <= CHART_V_HALF_WIDTH)
        # the default chart keeps the 4-cell margin even on coarse grids; at
        # the 65^2 reference resolution it is the whole 0.35 square
        self.chart_v = square & geo.eroded_interior(CHART_V_MARGIN)
        if not np.any(self.chart_v):
            raise ConfigError("Calabi chart V is empty on this grid")
        # torsion of the initial metric (components valid on interior)
        self.torsion0 = torsion(scenario.w0)
        # product Kaehler comparison metric for the Calabi quantity
        shape = self.grid.shape
        gs = self.grid.broadcast_base(fam.gS) * np.ones(shape)
        self.g_hat = HermitianMetricField(
            np.full(shape, scenario.spec.fiber_scale),
            np.zeros(shape, dtype=complex), gs, self.grid, "active",
            admissible=True)
        self.gamma_hat = christoffels(self.g_hat)
        self.w0_metric = scenario.w0

    def mask4(self, mask2d: np.ndarray) -> np.ndarray:
        if self.grid.mode == "full":
            return mask2d[:, :, None, None] & np.ones(self.grid.shape, bool)
        return mask2d


def _sup(arr: np.ndarray, mask: np.ndarray) -> float:
    return float(np.max(np.abs(arr[mask])))


def _minmax(arr: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    sel = arr[mask]
    return float(np.min(sel)), float(np.max(sel))


# ---------------------------------------------------------------------------
# individual diagnostics
# ---------------------------------------------------------------------------

def fiber_diameter(g: HermitianMetricField, spec: GridSpec,
                   interior: np.ndarray) -> tuple[np.ndarray, float]:
    """Flat-torus diameter of each fiber and the max fiber deviation.

    For the square unit lattice the Riemannian metric 2 kappa |dz|^2 has
    diameter sqrt(kappa) (half-diagonal of the cell); full mode uses the
    fiber-mean coefficient and reports the largest deviation from it.
    """
    if spec.mode == "reduced":
        kappa = g.c11
        dev = 0.0
    else:
        kappa = np.mean(g.c11, axis=(2, 3))
        dev = float(np.max(np.abs((g.c11 - kappa[:, :, None, None])
                                  [interior])))
    diam = np.sqrt(np.maximum(kappa, 0.0))
    return diam, dev


def fiber_c1_distance(g: HermitianMetricField, t: float, fam: ReferenceFamily,
                      spec: GridSpec, interior: np.ndarray) -> float:
    """sup over fibers of |e^t g|_fiber - g_flat| in C^0 plus first fiber
    derivatives (g_0-normalized); reduced mode carries only the C^0 part."""
    a = np.exp(t) * g.c11 - fam.flat11
    c0 = _sup(a, interior)
    if spec.mode == "reduced":
        return c0
    scale = 1.0 / np.sqrt(2.0 * np.maximum(fam.flat11, 1e-300))
    d1a = d1(a + 0j, spec)
    # for real a: d_x1 a = 2 Re d1 a, d_y1 a = -2 Im d1 a
    deriv = 2.0 * (np.abs(d1a.real) + np.abs(d1a.imag)) * scale
    c1 = float(np.max(deriv[interior]))
    return c0 + c1


def calabi_S(g: HermitianMetricField, ctx: DiagnosticsContext,
             chart: np.ndarray | None = None) -> float:
    """max over the chart V of |Gamma(g) - Gamma(g_hat)|^2_g.

    An explicitly supplied chart must keep a 4-cell margin to the ghost ring.
    """
    if chart is not None:
        if not np.all(chart <= ctx.geometry.eroded_interior(CHART_V_MARGIN)):
            raise ConfigError("Calabi chart violates the 4-cell margin")
    else:
        chart = ctx.chart_v
    gamma = christoffels(g)
    psi = gamma - ctx.gamma_hat
    mask = ctx.mask4(chart)
    psi_m = psi[..., mask]
    lower = {(1, 1): g.c11[mask] + 0j, (1, 2): g.c12[mask],
             (2, 1): np.conj(g.c12[mask]), (2, 2): g.c22[mask] + 0j}
    i11, i12, i22 = g.inverse_components()
    inv = {(1, 1): i11[mask] + 0j, (1, 2): i12[mask],
           (2, 1): np.conj(i12[mask]), (2, 2): i22[mask] + 0j}
    acc = np.zeros(psi_m.shape[-1])
    for i in (1, 2):
        for a in (1, 2):
            for j in (1, 2):
                for b in (1, 2):
                    for k in (1, 2):
                        for c in (1, 2):
                            term = (lower[(i, a)] * inv[(j, b)] * inv[(k, c)]
                                    * psi_m[i - 1, j - 1, k - 1]
                                    * np.conj(psi_m[a - 1, b - 1, c - 1]))
                            acc = acc + term.real
    return float(np.max(acc)) if acc.size else 0.0


def gh_proxy(g: HermitianMetricField, t: float, ctx: DiagnosticsContext
             ) -> float:
    """max fiber diameter plus the g0-operator norm of g - pi^* omega_S."""
    fam, spec = ctx.fam, ctx.grid
    diam, _ = fiber_diameter(g, spec, ctx.mask4(ctx.interior))
    dmax = float(np.max(diam[ctx.interior]))
    gs = spec.broadcast_base(fam.gS) * np.ones(spec.shape)
    diff = Form11Field(g.c11, g.c12, g.c22 - gs, spec, "interior")
    lam_min, lam_max = generalized_eigs(diff, ctx.w0_metric)
    mask = ctx.mask4(ctx.interior)
    opnorm = float(np.max(np.maximum(np.abs(lam_min), np.abs(lam_max))[mask]))
    return dmax + opnorm


def _reference_torsion_norms(ctx: DiagnosticsContext, t: float
                             ) -> tuple[float, float]:
    """(|T~|_g~ max, e^{-t/2} |dbar T~|_g~ max) on interior points."""
    fam, spec, geo = ctx.fam, ctx.grid, ctx.geometry
    emt = np.exp(-t)
    g_t = fam.metric_at(t)
    t0 = ctx.torsion0
    tt1, tt2 = emt * t0.t1, emt * t0.t2
    tnorm_sq = tensor_norm(TorsionField(tt1, tt2, spec), g_t).values
    mask = ctx.mask4(ctx.interior)
    torsion_max = float(np.sqrt(max(np.max(tnorm_sq[mask]), 0.0)))

    # covariant dbar of the lowered torsion: B[l,k] = d_lbar T~_{1 2 kbar}
    #   - conj(Gamma~^r_{l k}) T~_{1 2 rbar}
    gam = christoffels(g_t)
    tt = {1: tt1, 2: tt2}
    b = {}
    for l in (1, 2):
        for k in (1, 2):
            if l == 1:
                lead = d1bar(tt[k], spec)
            else:
                lead = d2bar(tt[k], spec)
            corr = sum(np.conj(gam[r - 1, l - 1, k - 1]) * tt[r]
                       for r in (1, 2))
            b[(l, k)] = lead - corr
    i11, i12, i22 = g_t.inverse_components()
    inv = {(1, 1): i11[mask] + 0j, (1, 2): i12[mask],
           (2, 1): np.conj(i12[mask]), (2, 2): i22[mask] + 0j}
    det = g_t.det()[mask]
    bm = {key: val[mask] for key, val in b.items()}
    acc = np.zeros(det.shape)
    for l in (1, 2):
        for a in (1, 2):
            for k in (1, 2):
                for c in (1, 2):
                    term = (inv[(a, l)] * inv[(c, k)]
                            * bm[(l, k)] * np.conj(bm[(a, c)]))
                    acc = acc + term.real
    dbar_sq = 2.0 / det * acc
    dbar_max = float(np.sqrt(max(np.max(dbar_sq), 0.0)))
    return torsion_max, np.exp(-t / 2.0) * dbar_max


def gauduchon_drift(g: HermitianMetricField, ctx: DiagnosticsContext) -> float:
    """sup |i ddbar omega| coefficient of the evolving metric on the eroded
    interior (components are only known at interior points)."""
    spec = ctx.grid
    coeff = (d1d1bar(g.c22 + 0j, spec).real
             + d2d2bar_real(np.real(g.c11), spec)
             - 2.0 * np.real(d1(d2bar(np.conj(g.c12), spec), spec)))
    return _sup(coeff, ctx.mask4(ctx.drift_mask))


# ---------------------------------------------------------------------------
# snapshot
# ---------------------------------------------------------------------------

def record_snapshot(state: FlowState, ctx: DiagnosticsContext
                    ) -> tuple[DiagnosticsRecord, PinchSample]:
    """Compute all monitored quantities from a flow snapshot."""
    fam, geo, spec = ctx.fam, ctx.geometry, ctx.grid
    t = state.t
    interior = ctx.interior
    m4 = ctx.mask4(interior)

    phi = state.phi
    # the analytic rhs at the snapshot, never a finite time difference
    phidot, g = ma_rhs(phi, fam, t, geo, exact_eig=False)
    u_vals = phi.values + phidot.values
    u = RealScalarField(u_vals, spec, "interior").filled(geo)

    sup_phi = _sup(phi.values, m4)
    sup_phidot = _sup(phidot.values, m4)
    sup_u = _sup(u_vals, m4)
    grad_u = grad_norm_sq(g, u)
    sup_grad = float(np.max(grad_u.values[m4]))

    tilde = fam.metric_at(t)
    tr_ref_omega = trace_form(tilde, g).values
    tr_omega_ref = trace_form(g, tilde).values
    tr1 = float(np.max(tr_ref_omega[m4] - 2.0))
    tr2 = float(np.max(tr_omega_ref[m4] - 2.0))

    # scalar curvature through the invariant potential u:
    #   R = -Delta_g u - tr_g(omega_S)
    gs = spec.broadcast_base(fam.gS) * np.ones(spec.shape)
    omega_s = Form11Field(np.zeros(spec.shape),
                          np.zeros(spec.shape, dtype=complex), gs, spec,
                          "active")
    lap_u = laplacian(g, u).values
    r_vals = -lap_u - trace_form(g, omega_s).values
    r_min, r_max = _minmax(r_vals, m4)

    torsion_ref, dbar_scaled = _reference_torsion_norms(ctx, t)

    s_max = calabi_S(g, ctx)
    diam, _dev = fiber_diameter(g, spec, m4)
    diam_max = float(np.max(diam[interior]))
    c1 = fiber_c1_distance(g, t, fam, spec, m4)
    gh = gh_proxy(g, t, ctx)

    vol_ratio = g.det() / HermitianMetricField.from_form(
        fam.form_at(t)).det()
    v_min, v_max = _minmax(vol_ratio, m4)

    drift = gauduchon_drift(g, ctx)

    # eigenvalue-lemma audit with eps = observed trace excess; the same
    # eigenvalue sweep provides the exact admissibility minimum
    excess = max(tr1, tr2)
    eps_use = min(max(excess, 1e-12), 0.049)
    root = 2.0 * np.sqrt(eps_use)
    lam_min, lam_max = generalized_eigs(g, tilde)
    emin = float(np.min(lam_min[m4]))
    emax = float(np.max(lam_max[m4]))

    rec = DiagnosticsRecord(
        t=t, sup_phi=sup_phi, sup_phidot=sup_phidot, sup_u=sup_u,
        sup_grad_u_sq=sup_grad, tr_ref_omega_minus2_max=tr1,
        tr_omega_ref_minus2_max=tr2, R_min=r_min, R_max=r_max,
        torsion_ref_norm_max=torsion_ref, dbar_torsion_scaled=dbar_scaled,
        calabi_S_max=s_max, fiber_diam_max=diam_max, fiber_c1_max=c1,
        gh_proxy=gh, vol_ratio_min=v_min, vol_ratio_max=v_max,
        admissibility_min=emin, gauduchon_drift=drift)
    sound = (excess <= eps_use + 1e-15) and (1.0 - root <= emin) \
        and (emax <= 1.0 + root)
    pinch = PinchSample(t=t, trace_excess=excess, eig_min=emin, eig_max=emax,
                        certified_low=1.0 - root, certified_high=1.0 + root,
                        sound=bool(sound))
    return rec, pinch


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------

def fit_rate(ts: np.ndarray, ys: np.ndarray,
             window: tuple[float, float]) -> RateFit:
    """Least-squares slope of log(y) over the window; y clamped at 1e-14."""
    ts = np.asarray(ts, dtype=float)
    ys = np.asarray(ys, dtype=float)
    sel = (ts >= window[0] - 1e-12) & (ts <= window[1] + 1e-12)
    if int(sel.sum()) < 3:
        raise InsufficientDataError(
            f"rate fit needs >= 3 samples in window {window}")
    x = ts[sel]
    y = np.log(np.maximum(np.abs(ys[sel]), LOG_CLAMP))
    a = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot <= 1e-28:
        r2 = 1.0
    else:
        r2 = max(0.0, min(1.0, 1.0 - float(np.sum(resid ** 2)) / ss_tot))
    return RateFit(window=(float(window[0]), float(window[1])),
                   slope=float(coef[0]), intercept=float(coef[1]),
                   r_squared=r2)


def default_fit_window(t_i: float, t_end: float) -> tuple[float, float]:
    return (max(t_i, 2.0) + 1.0, t_end)


# ---------------------------------------------------------------------------
# theorem checks
# ---------------------------------------------------------------------------

DEFAULT_THRESHOLDS = {
    "phi_exact_sup": 5e-4,          # exact-solution tracking
    "trace_exact_sup": 1e-3,
    "phi_slope": -0.85,
    "phi_fit_r2": 0.98,
    "phidot_slope": -0.20,
    "trace_slope": -0.10,
    "r_lower_factor": 10.0,
    "r_growth_slope": 0.6,
    "calabi_slope": 2.0 / 3.0 + 0.1,
    "calabi_exact_sup": 1e-6,
    "diam_slope_center": -0.5,
    "diam_slope_tol": 0.05,
    "c1_slope": -0.10,
    "gh_slope": -0.40,
    "pinch_from_t": 4.0,
}


def series_arrays(series: list[DiagnosticsRecord]) -> dict[str, np.ndarray]:
    cols = DiagnosticsRecord.column_names()
    data = np.array([rec.row() for rec in series], dtype=float)
    return {name: data[:, i] for i, name in enumerate(cols)}


def theorem_checks(series: list[DiagnosticsRecord],
                   pinch_samples: list[PinchSample],
                   scenario_kind: str, t_i: float,
                   thresholds: dict | None = None) -> TheoremReport:
    """Evaluate the acceptance thresholds on the recorded series.

    The asserted set depends on the scenario kind: the exact-solution
    scenario asserts tracking bounds, perturbed scenarios assert the decay
    and pinching rates; curvature-window, collapse and proxy checks are
    always asserted.
    """
    if len(series) < 5:
        raise InsufficientDataError("series too short for theorem checks")
    th = dict(DEFAULT_THRESHOLDS)
    if thresholds:
        th.update(thresholds)
    cols = series_arrays(series)
    ts = cols["t"]
    t_end = float(ts[-1])
    window = default_fit_window(t_i, t_end)
    checks: list[CheckResult] = []

    def add(name, bound, observed, passed):
        checks.append(CheckResult(name, bound, float(observed),
                                  float(_margin(bound, observed)),
                                  bool(passed)))

    def _margin(bound, observed):
        try:
            op, val = bound.split()
            val = float(val)
        except ValueError:
            return 0.0
        return val - observed if op == "<=" else observed - val

    exact = scenario_kind == "kahler_product"
    if exact:
        sp = float(np.max(cols["sup_phi"]))
        add("exact_phi_tracking", f"<= {th['phi_exact_sup']}", sp,
            sp <= th["phi_exact_sup"])
        tr = float(np.max(np.abs(cols["tr_ref_omega_minus2_max"])))
        add("exact_trace_tracking", f"<= {th['trace_exact_sup']}", tr,
            tr <= th["trace_exact_sup"])
        s_all = float(np.max(cols["calabi_S_max"]))
        add("calabi_exact", f"<= {th['calabi_exact_sup']}", s_all,
            s_all <= th["calabi_exact_sup"])
    else:
        f_phi = fit_rate(ts, cols["sup_phi"], window)
        add("phi_decay_slope", f"<= {th['phi_slope']}", f_phi.slope,
            f_phi.slope <= th["phi_slope"])
        add("phi_decay_r2", f">= {th['phi_fit_r2']}", f_phi.r_squared,
            f_phi.r_squared >= th["phi_fit_r2"])
        f_pd = fit_rate(ts, cols["sup_phidot"], window)
        add("phidot_decay_slope", f"<= {th['phidot_slope']}", f_pd.slope,
            f_pd.slope <= th["phidot_slope"])
        f_tr1 = fit_rate(ts, np.maximum(cols["tr_ref_omega_minus2_max"],
                                        LOG_CLAMP), window)
        f_tr2 = fit_rate(ts, np.maximum(cols["tr_omega_ref_minus2_max"],
                                        LOG_CLAMP), window)
        add("trace_ref_omega_slope", f"<= {th['trace_slope']}", f_tr1.slope,
            f_tr1.slope <= th["trace_slope"])
        add("trace_omega_ref_slope", f"<= {th['trace_slope']}", f_tr2.slope,
            f_tr2.slope <= th["trace_slope"])
        late = [p for p in pinch_samples if p.t >= th["pinch_from_t"] - 1e-9]
        n_bad = sum(0 if p.sound else 1 for p in late)
        add("metric_pinching_certified", "<= 0", n_bad, n_bad == 0)
        if scenario_kind == "gauduchon_torsion":
            f_s = fit_rate(ts, np.maximum(cols["calabi_S_max"], LOG_CLAMP),
                           window)
            add("calabi_growth_slope", f"<= {th['calabi_slope']}", f_s.slope,
                f_s.slope <= th["calabi_slope"])
        if scenario_kind == "fiber_inhomogeneous":
            f_c1 = fit_rate(ts, cols["fiber_c1_max"], window)
            add("fiber_c1_slope", f"<= {th['c1_slope']}", f_c1.slope,
                f_c1.slope <= th["c1_slope"])

    # scalar-curvature window; theorem checks only use t >= T_I + 1
    idx_ref = int(np.searchsorted(ts, t_i + 1.0))
    idx_ref = min(idx_ref, len(ts) - 1)
    r_scale = 1.0 + max(abs(float(cols["R_max"][idx_ref])),
                        abs(float(cols["R_min"][idx_ref])))
    r_floor = -th["r_lower_factor"] * r_scale
    late = ts >= t_i + 1.0 - 1e-9
    r_min_all = float(np.min(cols["R_min"][late]))
    add("scalar_lower_bound", f">= {r_floor:.6g}", r_min_all,
        r_min_all >= r_floor)
    f_r = fit_rate(ts, np.maximum(cols["R_max"], 0.01), window)
    add("scalar_growth_slope", f"<= {th['r_growth_slope']}", f_r.slope,
        f_r.slope <= th["r_growth_slope"])

    # collapse diagnostics (all scenarios)
    f_diam = fit_rate(ts, cols["fiber_diam_max"], window)
    lo = th["diam_slope_center"] - th["diam_slope_tol"]
    hi = th["diam_slope_center"] + th["diam_slope_tol"]
    add("fiber_diam_slope", f"in [{lo}, {hi}]", f_diam.slope,
        lo <= f_diam.slope <= hi)
    f_gh = fit_rate(ts, cols["gh_proxy"], window)
    add("gh_proxy_slope", f"<= {th['gh_slope']}", f_gh.slope,
        f_gh.slope <= th["gh_slope"])
    return TheoremReport(checks)
