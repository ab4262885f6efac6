"""Time integration of the scalar parabolic complex Monge-Ampere flow.

State is the potential phi on interior points; the evolving metric is
omega(t) = omega_tilde(t) + i ddbar phi.  The right-hand side is

    dphi/dt = log( e^t * (omega_tilde + i ddbar phi)^2 / Omega ) - phi,

with the top-form convention omega^2 -> 2 det g.  Schemes:

* explicit_rk2: midpoint rule, dt limited by the full diffusion symbol
  (including the e^t fiber term in full mode; reference/debug use there).
* imex_fiber_spectral: backward-Euler step with the constant-in-fiber part of
  the reference fiber diffusion implicit (Fourier-diagonal per base point) and
  a fixed-point closure to newton_tol, so dt stays proportional to the base
  h^2 uniformly in t.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .bolza import BaseGeometry
from .errors import (AdmissibilityError, ConfigError, InsufficientDataError,
                     StepFailure)
from .fields import Form11Field, HermitianMetricField, RealScalarField
from .geom import (ddbar_scalar, generalized_eigs, laplacian, trace_form)
from .grids import GridSpec
from .scenarios import ReferenceFamily

CHECKPOINT_MAGIC = b"CRFL"
CHECKPOINT_VERSION = 1
MAX_CONSECUTIVE_FAILURES = 8


@dataclass
class StepperConfig:
    scheme: str = "explicit_rk2"
    cfl_safety: float = 0.2
    dt_max: float = 1e-2
    newton_tol: float = 1e-10
    newton_max_iter: int = 20
    admissibility_floor: float = 1e-6

    def __post_init__(self):
        if self.scheme not in ("explicit_rk2", "imex_fiber_spectral"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if not (0.0 < self.cfl_safety <= 0.5):
            raise ConfigError("cfl_safety must lie in (0, 0.5]")
        for name in ("dt_max", "newton_tol", "admissibility_floor"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


@dataclass
class FlowState:
    t: float
    phi: RealScalarField
    phidot_cache: RealScalarField | None = None
    phidot_prev: RealScalarField | None = None
    dt_last: float = 0.0
    step_count: int = 0
    admissibility_min: float = np.inf
    metric_cache: HermitianMetricField | None = None


# ---------------------------------------------------------------------------
# pointwise flow operators
# ---------------------------------------------------------------------------

def metric_from_potential(phi: RealScalarField, fam: ReferenceFamily, t: float,
                          geometry: BaseGeometry, floor: float = 1e-6,
                          exact_eig: bool = True) -> HermitianMetricField:
    """omega(t) = omega_tilde(t) + i ddbar phi, with admissibility attached.

    Raises AdmissibilityError when the minimum eigenvalue of omega relative
    to the positive comparison family drops below the floor on interior
    points.  The hot path (exact_eig=False) certifies the floor through the
    cheaper Sylvester test of g - floor * g_ref > 0 and records the floor as
    the certified bound; diagnostics request the exact eigenvalue.
    """
    filled = phi if phi.ghost_state == "active" else phi.filled(geometry)
    hess = ddbar_scalar(filled)
    tilde = fam.form_at(t)
    g = HermitianMetricField(tilde.c11 + hess.c11, tilde.c12 + hess.c12,
                             tilde.c22 + hess.c22, phi.grid, "interior")
    interior = geometry.interior
    guard = fam.guard_metric_at(t)
    if exact_eig:
        lam_min, _ = generalized_eigs(g, guard)
        adm = float(np.min(lam_min[interior]))
        bad = adm < floor
    else:
        # Sylvester floor test: g - floor * guard positive definite
        m11 = g.c11 - floor * guard.c11
        m22 = g.c22 - floor * guard.c22
        m12 = g.c12 - floor * guard.c12
        mdet = m11 * m22 - np.abs(m12) ** 2
        adm = floor
        bad = (np.min(m11[interior]) <= 0.0
               or np.min(mdet[interior]) <= 0.0)
    if bad:
        if not exact_eig:
            lam_min, _ = generalized_eigs(g, guard)
            adm = float(np.min(lam_min[interior]))
        raise AdmissibilityError(
            f"potential left the admissible cone at t={t:.6f}: "
            f"min relative eigenvalue {adm:.3e} < {floor:.1e}")
    g.admissible = True
    g.admissibility_min = adm
    return g


def ma_rhs(phi: RealScalarField, fam: ReferenceFamily, t: float,
           geometry: BaseGeometry, floor: float = 1e-6,
           exact_eig: bool = True
           ) -> tuple[RealScalarField, HermitianMetricField]:
    """Monge-Ampere right-hand side log(e^t 2 det g / Omega) - phi."""
    g = metric_from_potential(phi, fam, t, geometry, floor, exact_eig)
    det = g.det()
    i4 = geometry.interior_grid(phi.grid)
    ratio = np.where(det > 0, 2.0 * det / fam.omega_coeff, 1.0)
    out = np.where(i4, np.log(ratio) + t - phi.values, 0.0)
    return RealScalarField(out, phi.grid, "interior"), g


# ---------------------------------------------------------------------------
# dt policy
# ---------------------------------------------------------------------------

def _fiber_symbol_max(spec: GridSpec) -> float:
    if spec.mode == "reduced":
        return 0.0
    kx = np.pi * spec.fiber_nx
    ky = np.pi * spec.fiber_ny
    return 0.25 * (kx ** 2 + ky ** 2)


def stability_dt(g: HermitianMetricField, spec: GridSpec,
                 geometry: BaseGeometry, config: StepperConfig,
                 implicit_coeff: np.ndarray | None = None) -> float:
    """cfl_safety times the explicit stability limit of the linearized flow.

    The diffusion tensor of the linearization is the inverse metric; the
    implicit fiber coefficient (imex) is subtracted before taking symbols.
    """
    inv11, inv12, inv22 = g.inverse_components()
    interior = geometry.interior
    sig_b = 1.0 / spec.h_bx ** 2 + 1.0 / spec.h_by ** 2
    sig_f = _fiber_symbol_max(spec)
    if spec.mode == "reduced":
        sym = np.max(inv22[interior]) * sig_b
    else:
        a11 = inv11 if implicit_coeff is None else np.abs(
            inv11 - implicit_coeff[:, :, None, None])
        local = (inv22.real * sig_b + np.abs(a11) * sig_f
                 + 2.0 * np.abs(inv12) * np.sqrt(sig_b * sig_f))
        sym = np.max(local[interior])
    if sym <= 0:
        return config.dt_max
    return min(config.dt_max, config.cfl_safety * 2.0 / float(sym))


# ---------------------------------------------------------------------------
# steppers
# ---------------------------------------------------------------------------

def step_explicit_rk2(state: FlowState, dt: float, fam: ReferenceFamily,
                      geometry: BaseGeometry, config: StepperConfig
                      ) -> FlowState:
    """Midpoint rule; second order in time.

    The stage-1 slope is the cached rhs at (phi, t), so a step costs two
    fresh rhs evaluations (midpoint and the end-of-step cache refresh).
    """
    phi = state.phi
    k1 = state.phidot_cache
    if k1 is None:
        k1, _ = ma_rhs(phi, fam, state.t, geometry, config.admissibility_floor)
    mid = RealScalarField(phi.values + 0.5 * dt * k1.values, phi.grid,
                          "interior")
    k2, _ = ma_rhs(mid, fam, state.t + 0.5 * dt, geometry,
                   config.admissibility_floor, exact_eig=False)
    new = RealScalarField(phi.values + dt * k2.values, phi.grid, "interior")
    rhs_new, g_new = ma_rhs(new, fam, state.t + dt, geometry,
                            config.admissibility_floor, exact_eig=False)
    return FlowState(t=state.t + dt, phi=new, phidot_cache=rhs_new,
                     phidot_prev=state.phidot_cache, dt_last=dt,
                     step_count=state.step_count + 1,
                     admissibility_min=g_new.admissibility_min,
                     metric_cache=g_new)


def step_imex(state: FlowState, dt: float, fam: ReferenceFamily,
              geometry: BaseGeometry, config: StepperConfig) -> FlowState:
    """Backward-Euler IMEX with fiber-spectral implicit part.

    Solves phi_new = phi + dt * rhs(phi_new, t+dt) by a preconditioned
    fixed-point iteration: the constant-in-fiber reference fiber diffusion
    c(w) d1 d1bar and the -phi reaction term are inverted exactly in fiber
    Fourier space, the remainder is relaxed.
    """
    spec = state.phi.grid
    t_new = state.t + dt
    tilde = fam.guard_metric_at(t_new)
    inv11 = tilde.inverse_components()[0]
    c_base = np.mean(inv11, axis=(2, 3)) if spec.mode == "full" else inv11
    kx, ky = spec.fiber_wavenumbers()
    lam = 0.25 * (kx ** 2 + ky ** 2)          # symbol of -d1 d1bar
    denom = 1.0 + dt + dt * c_base[:, :, None, None] * lam[None, None, :, :] \
        if spec.mode == "full" else None

    phi0 = state.phi.values
    if state.phidot_cache is not None and state.phidot_prev is not None \
            and state.dt_last > 0:
        w = 0.5 * dt / state.dt_last
        y = phi0 + dt * ((1.0 + w) * state.phidot_cache.values
                         - w * state.phidot_prev.values)
    elif state.phidot_cache is not None:
        y = phi0 + dt * state.phidot_cache.values
    else:
        y = phi0.copy()
    g_last = None
    y_prev = None
    for _ in range(config.newton_max_iter):
        y_prev = y
        rhs, g_last = ma_rhs(RealScalarField(y, spec, "interior"), fam, t_new,
                             geometry, config.admissibility_floor,
                             exact_eig=False)
        resid = phi0 + dt * rhs.values - y
        if spec.mode == "full":
            nh = spec.fiber_nx // 2 + 1
            delta = sfft.irfft2(
                sfft.rfft2(resid, axes=(2, 3), workers=2) / denom[..., :nh],
                s=resid.shape[-2:], axes=(2, 3), workers=2)
        else:
            delta = resid / (1.0 + dt)
        y = y + delta
        if float(np.max(np.abs(delta[geometry.interior]))) <= config.newton_tol:
            break
    else:
        raise StepFailure(
            f"imex fixed point did not reach {config.newton_tol:.1e} in "
            f"{config.newton_max_iter} iterations at t={t_new:.4f}")
    new = RealScalarField(y, spec, "interior")
    # scheme-consistent rate as the next predictor seed; diagnostics always
    # re-evaluate the analytic rhs at record times
    rhs_new = RealScalarField((y - phi0) / dt, spec, "interior")
    return FlowState(t=t_new, phi=new, phidot_cache=rhs_new,
                     phidot_prev=state.phidot_cache, dt_last=dt,
                     step_count=state.step_count + 1,
                     admissibility_min=g_last.admissibility_min,
                     metric_cache=g_last)


def step(state: FlowState, config: StepperConfig, fam: ReferenceFamily,
         geometry: BaseGeometry, dt_cap: float = np.inf) -> FlowState:
    """Advance one step; dt from the stability policy, capped by dt_cap.

    Fixed-point failures retry with halved dt; more than
    MAX_CONSECUTIVE_FAILURES halvings abort the run.
    """
    g = state.metric_cache
    if g is None:
        _, g = ma_rhs(state.phi, fam, state.t, geometry,
                      config.admissibility_floor)
    implicit = None
    if config.scheme == "imex_fiber_spectral" and state.phi.grid.mode == "full":
        tilde = fam.guard_metric_at(state.t)
        implicit = np.mean(tilde.inverse_components()[0], axis=(2, 3))
    dt = min(stability_dt(g, state.phi.grid, geometry, config, implicit), dt_cap)
    failures = 0
    while True:
        try:
            if config.scheme == "explicit_rk2":
                return step_explicit_rk2(state, dt, fam, geometry, config)
            return step_imex(state, dt, fam, geometry, config)
        except StepFailure:
            failures += 1
            if failures >= MAX_CONSECUTIVE_FAILURES:
                raise
            dt *= 0.5


def init_state(rho: RealScalarField, fam: ReferenceFamily,
               geometry: BaseGeometry, config: StepperConfig) -> FlowState:
    """Initial state phi(0) = -rho with the rhs cache primed."""
    phi = RealScalarField(-rho.values.copy(), rho.grid, "interior")
    rhs, g = ma_rhs(phi, fam, 0.0, geometry, config.admissibility_floor)
    return FlowState(t=0.0, phi=phi, phidot_cache=rhs, phidot_prev=None,
                     dt_last=0.0, step_count=0,
                     admissibility_min=g.admissibility_min, metric_cache=g)


def advance_to(state: FlowState, t_target: float, config: StepperConfig,
               fam: ReferenceFamily, geometry: BaseGeometry) -> FlowState:
    """Step until t_target is reached exactly (last step clipped)."""
    while state.t < t_target - 1e-12:
        state = step(state, config, fam, geometry,
                     dt_cap=t_target - state.t)
    return state


# ---------------------------------------------------------------------------
# direct tensor flow (cross-check mode)
# ---------------------------------------------------------------------------

def tensor_rhs(g: HermitianMetricField, fam: ReferenceFamily, t: float,
               geometry: BaseGeometry) -> Form11Field:
    """-Ric(omega) - omega for the metric-component flow.

    Ric is computed through the invariant scalar log(e^t omega^2 / Omega):
    Ric(omega) = -i ddbar of it + Ric(Omega); the second term is the exact
    -omega_S of the volume-form construction (its discrete residual is
    tracked separately as the Einstein residual).  Every ghost access is a
    scalar one: the log-ratio fills as an invariant function.
    """
    det = g.det()
    interior = geometry.interior
    if g.grid.mode == "full":
        sel = interior[:, :, None, None] & (det > 0)
    else:
        sel = interior & (det > 0)
    s = np.where(sel, np.log(np.where(sel, 2.0 * det / fam.omega_coeff, 1.0)),
                 0.0)
    s_f = geometry.fill(s)
    dd_s = ddbar_scalar(RealScalarField(s_f, g.grid, "active"))
    gs = g.grid.broadcast_base(fam.gS) * np.ones(g.grid.shape)
    # Ric(omega) = -dd_s - omega_S ; rhs = -Ric - omega
    return Form11Field(dd_s.c11 - g.c11,
                       dd_s.c12 - g.c12,
                       dd_s.c22 + gs - g.c22, g.grid, "interior")


def tensor_step(g: HermitianMetricField, dt: float, fam: ReferenceFamily,
                t: float, geometry: BaseGeometry,
                order: int = 2) -> HermitianMetricField:
    """Explicit Euler / midpoint step of d omega/dt = -Ric(omega) - omega."""
    k1 = tensor_rhs(g, fam, t, geometry)
    if order == 1:
        new = Form11Field(g.c11 + dt * k1.c11, g.c12 + dt * k1.c12,
                          g.c22 + dt * k1.c22, g.grid, "interior")
    else:
        mid = HermitianMetricField(g.c11 + 0.5 * dt * k1.c11,
                                   g.c12 + 0.5 * dt * k1.c12,
                                   g.c22 + 0.5 * dt * k1.c22,
                                   g.grid, "interior", admissible=True)
        k2 = tensor_rhs(mid, fam, t + 0.5 * dt, geometry)
        new = Form11Field(g.c11 + dt * k2.c11, g.c12 + dt * k2.c12,
                          g.c22 + dt * k2.c22, g.grid, "interior")
    out = HermitianMetricField.from_form(new, admissible=False)
    det = out.det()
    interior = geometry.interior
    dmin = float(np.min(det[interior]))
    c11min = float(np.min(out.c11[interior]))
    if dmin <= 0 or c11min <= 0:
        raise AdmissibilityError(
            f"tensor flow lost positivity at t={t + dt:.4f}: "
            f"min det {dmin:.3e}, min c11 {c11min:.3e}")
    out.admissible = True
    return out


# ---------------------------------------------------------------------------
# solver consistency residual
# ---------------------------------------------------------------------------

def residual_dotphi(state: FlowState, fam: ReferenceFamily,
                    geometry: BaseGeometry) -> RealScalarField:
    """Discrete residual of (d/dt - Delta) phidot = tr_omega(omega_S -
    omega_tilde) + 1 - phidot; an independent consistency check."""
    if state.phidot_cache is None or state.phidot_prev is None \
            or state.dt_last == 0.0:
        raise InsufficientDataError(
            "residual_dotphi needs two consecutive phidot snapshots")
    spec = state.phi.grid
    g = metric_from_potential(state.phi, fam, state.t, geometry)
    dt_phidot = (state.phidot_cache.values - state.phidot_prev.values) \
        / state.dt_last
    pd_filled = state.phidot_cache.filled(geometry)
    lap = laplacian(g, pd_filled)
    tilde = fam.form_at(state.t)
    gs = spec.broadcast_base(fam.gS) * np.ones(spec.shape)
    diff = Form11Field(-tilde.c11, -tilde.c12, gs - tilde.c22, spec, "active")
    bracket = trace_form(g, diff).values + 1.0 - state.phidot_cache.values
    vals = dt_phidot - lap.values - bracket
    interior = geometry.interior
    if spec.mode == "full":
        out = np.where(interior[:, :, None, None], vals, 0.0)
    else:
        out = np.where(interior, vals, 0.0)
    return RealScalarField(out, spec, "interior")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, t: float, phi_values: np.ndarray,
                    config_hash: bytes, scenario_hash: bytes):
    """Binary checkpoint: magic, version, hashes, t, row-major phi doubles."""
    if len(config_hash) != 32 or len(scenario_hash) != 32:
        raise ConfigError("checkpoint hashes must be 32 bytes (sha-256)")
    arr = np.ascontiguousarray(phi_values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(config_hash)
        fh.write(scenario_hash)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack("<" + "I" * arr.ndim, *arr.shape))
        fh.write(struct.pack("<d", t))
        fh.write(arr.tobytes(order="C"))


def load_checkpoint(path):
    """Returns (t, phi array, config_hash, scenario_hash)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"not a checkpoint file: bad magic {magic!r}")
        version, = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        config_hash = fh.read(32)
        scenario_hash = fh.read(32)
        ndim, = struct.unpack("<I", fh.read(4))
        shape = struct.unpack("<" + "I" * ndim, fh.read(4 * ndim))
        t, = struct.unpack("<d", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(shape).copy()
    return t, data, config_hash, scenario_hash


def hash_payload(payload: str) -> bytes:
    return hashlib.sha256(payload.encode("utf-8")).digest()
