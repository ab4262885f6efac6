"""Run configuration, validation, orchestration and file outputs.

A run is a pure function of its configuration: geometry construction, initial
data, reference family, time integration with diagnostics at a fixed cadence,
then series/report emission.  All file outputs are byte-deterministic
(shortest round-trip floats in the CSV, 12 significant digits in the report).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .bolza import BaseGeometry, build_bolza
from .diagnostics import (DEFAULT_THRESHOLDS, DiagnosticsContext,
                          DiagnosticsRecord, PinchSample, TheoremReport,
                          record_snapshot, theorem_checks)
from .errors import (AdmissibilityError, ConfigError,
                     InsufficientDataError, SingularMetricError, StepFailure)
from .flow import (FlowState, StepperConfig, hash_payload, init_state,
                   load_checkpoint, ma_rhs, save_checkpoint, step)
from .grids import GridSpec
from .scenarios import (Scenario, ScenarioSpec, build_initial_metric,
                        build_reference, solve_semiflat)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

_GRID_KEYS = {"base_nx", "base_ny", "base_box", "fiber_nx", "fiber_ny", "mode"}
_SCENARIO_KEYS = {"kind", "amplitude", "bump_center", "bump_radius", "tau",
                  "fiber_scale"}
_STEPPER_KEYS = {"scheme", "cfl_safety", "dt_max", "newton_tol",
                 "newton_max_iter", "admissibility_floor"}
_TOP_KEYS = {"scenario", "grid", "stepper", "t_end", "cadence", "output_dir",
             "checkpoint_every", "fit_window", "thresholds"}


@dataclass
class RunConfig:
    scenario: ScenarioSpec
    grid: GridSpec
    stepper: StepperConfig
    t_end: float
    cadence: float
    output_dir: str
    checkpoint_every: int
    fit_window: tuple[float, float] | None
    thresholds: dict
    normalized: dict = field(repr=False, default_factory=dict)


def _reject_unknown(d: dict, allowed: set, path: str):
    for key in d:
        if key not in allowed:
            raise ConfigError(f"{path}{key}: unknown configuration key")


def _as_complex(value, path: str) -> complex:
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    raise ConfigError(f"{path}: expected a number or [re, im] pair")


def normalize_config(raw: dict) -> RunConfig:
    """Validate a raw configuration dict, applying defaults.

    Unknown keys are rejected with their field paths; the scenario may be
    given as a plain kind string.
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a JSON object")
    _reject_unknown(raw, _TOP_KEYS, "")

    sc_raw = raw.get("scenario", "kahler_product")
    if isinstance(sc_raw, str):
        sc_raw = {"kind": sc_raw}
    if not isinstance(sc_raw, dict):
        raise ConfigError("scenario: expected a kind string or object")
    _reject_unknown(sc_raw, _SCENARIO_KEYS, "scenario.")

    grid_raw = raw.get("grid", {})
    if not isinstance(grid_raw, dict):
        raise ConfigError("grid: expected an object")
    _reject_unknown(grid_raw, _GRID_KEYS, "grid.")
    mode = grid_raw.get("mode",
                        "full" if sc_raw.get("kind") == "fiber_inhomogeneous"
                        else "reduced")
    if mode not in ("reduced", "full"):
        raise ConfigError(f"grid.mode: unknown mode {mode!r}")
    default_base = 33 if mode == "full" else 65
    default_fiber = 16 if mode == "full" else 1
    try:
        grid = GridSpec(
            base_nx=int(grid_raw.get("base_nx", default_base)),
            base_ny=int(grid_raw.get("base_ny", default_base)),
            base_box=float(grid_raw.get("base_box", 0.85)),
            fiber_nx=int(grid_raw.get("fiber_nx", default_fiber)),
            fiber_ny=int(grid_raw.get("fiber_ny", default_fiber)),
            mode=mode)
    except ConfigError as exc:
        raise ConfigError(f"grid: {exc}") from None

    try:
        scenario = ScenarioSpec(
            kind=sc_raw.get("kind", "kahler_product"),
            amplitude=(None if sc_raw.get("amplitude") is None
                       else float(sc_raw["amplitude"])),
            bump_center=_as_complex(sc_raw.get("bump_center", 0.0),
                                    "scenario.bump_center"),
            bump_radius=(None if sc_raw.get("bump_radius") is None
                         else float(sc_raw["bump_radius"])),
            tau=_as_complex(sc_raw.get("tau", [0.0, 1.0]), "scenario.tau"),
            fiber_scale=float(sc_raw.get("fiber_scale", 1.0)),
            mode=mode)
    except ConfigError as exc:
        raise ConfigError(f"scenario: {exc}") from None

    st_raw = raw.get("stepper", {})
    if not isinstance(st_raw, dict):
        raise ConfigError("stepper: expected an object")
    _reject_unknown(st_raw, _STEPPER_KEYS, "stepper.")
    default_scheme = "imex_fiber_spectral" if mode == "full" else "explicit_rk2"
    try:
        stepper = StepperConfig(
            scheme=st_raw.get("scheme", default_scheme),
            cfl_safety=float(st_raw.get("cfl_safety", 0.2)),
            dt_max=float(st_raw.get("dt_max", 1e-2)),
            newton_tol=float(st_raw.get("newton_tol", 1e-10)),
            newton_max_iter=int(st_raw.get("newton_max_iter", 20)),
            admissibility_floor=float(st_raw.get("admissibility_floor", 1e-6)))
    except ConfigError as exc:
        raise ConfigError(f"stepper: {exc}") from None

    t_end = float(raw.get("t_end", 8.0 if mode == "reduced" else 6.0))
    cadence = float(raw.get("cadence", 0.05))
    if t_end <= 0 or cadence <= 0 or cadence > t_end:
        raise ConfigError("t_end and cadence must be positive with "
                          "cadence <= t_end")
    checkpoint_every = int(raw.get("checkpoint_every", 40))
    if checkpoint_every <= 0:
        raise ConfigError("checkpoint_every must be a positive record count")
    fit_window = raw.get("fit_window")
    if fit_window is not None:
        if (not isinstance(fit_window, (list, tuple)) or len(fit_window) != 2
                or not fit_window[0] < fit_window[1]):
            raise ConfigError("fit_window: expected [t0, t1] with t0 < t1")
        fit_window = (float(fit_window[0]), float(fit_window[1]))
    thresholds = raw.get("thresholds", {})
    if not isinstance(thresholds, dict):
        raise ConfigError("thresholds: expected an object")
    for key in thresholds:
        if key not in DEFAULT_THRESHOLDS:
            raise ConfigError(f"thresholds.{key}: unknown threshold")
    output_dir = str(raw.get("output_dir", f"runs/{scenario.kind}"))

    normalized = {
        "scenario": {
            "kind": scenario.kind,
            "amplitude": scenario.amp,
            "bump_center": [scenario.bump_center.real,
                            scenario.bump_center.imag],
            "bump_radius": scenario.radius,
            "tau": [scenario.tau.real, scenario.tau.imag],
            "fiber_scale": scenario.fiber_scale,
        },
        "grid": {
            "base_nx": grid.base_nx, "base_ny": grid.base_ny,
            "base_box": grid.base_box, "fiber_nx": grid.fiber_nx,
            "fiber_ny": grid.fiber_ny, "mode": grid.mode,
        },
        "stepper": {
            "scheme": stepper.scheme, "cfl_safety": stepper.cfl_safety,
            "dt_max": stepper.dt_max, "newton_tol": stepper.newton_tol,
            "newton_max_iter": stepper.newton_max_iter,
            "admissibility_floor": stepper.admissibility_floor,
        },
        "t_end": t_end,
        "cadence": cadence,
        "output_dir": output_dir,
        "checkpoint_every": checkpoint_every,
        "fit_window": list(fit_window) if fit_window else None,
        "thresholds": {k: thresholds[k] for k in sorted(thresholds)},
    }
    return RunConfig(scenario=scenario, grid=grid, stepper=stepper,
                     t_end=t_end, cadence=cadence, output_dir=output_dir,
                     checkpoint_every=checkpoint_every, fit_window=fit_window,
                     thresholds=dict(thresholds), normalized=normalized)


def parse_config(path: str) -> RunConfig:
    """Load and validate a JSON run configuration."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    return normalize_config(raw)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def config_hashes(config: RunConfig) -> tuple[bytes, bytes]:
    stripped = {k: v for k, v in config.normalized.items()
                if k != "output_dir"}
    return (hash_payload(canonical_json(stripped)),
            hash_payload(canonical_json(config.normalized["scenario"])))


# ---------------------------------------------------------------------------
# pipeline assembly
# ---------------------------------------------------------------------------

@dataclass
class Bundle:
    config: RunConfig
    geometry: BaseGeometry
    scenario: Scenario
    semiflat: object
    fam: object
    ctx: DiagnosticsContext


_GEOMETRY_CACHE: dict[tuple, BaseGeometry] = {}


def build_geometry(grid: GridSpec) -> BaseGeometry:
    """Geometry construction is deterministic; cache by grid signature."""
    key = (grid.base_nx, grid.base_ny, grid.base_box)
    if key not in _GEOMETRY_CACHE:
        _GEOMETRY_CACHE[key] = BaseGeometry(grid, build_bolza())
    geo = _GEOMETRY_CACHE[key]
    if geo.spec.shape != grid.shape:
        geo = BaseGeometry(grid, geo.group)
        _GEOMETRY_CACHE[key] = geo
    return geo


def build_bundle(config: RunConfig) -> Bundle:
    geometry = build_geometry(config.grid)
    scenario = build_initial_metric(config.scenario, geometry, config.grid)
    semiflat = solve_semiflat(scenario.w0, config.grid, geometry)
    fam = build_reference(scenario, semiflat)
    ctx = DiagnosticsContext(scenario, fam)
    return Bundle(config, geometry, scenario, semiflat, fam, ctx)


# ---------------------------------------------------------------------------
# output formatting
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def series_csv_text(series: list[DiagnosticsRecord]) -> str:
    lines = [",".join(DiagnosticsRecord.column_names())]
    for rec in series:
        lines.append(",".join(_fmt(v) for v in rec.row()))
    return "\n".join(lines) + "\n"


def _round12(obj):
    if isinstance(obj, float):
        return float(f"{obj:.12g}")
    if isinstance(obj, dict):
        return {k: _round12(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round12(v) for v in obj]
    return obj


def report_json_text(report: TheoremReport, meta: dict) -> str:
    payload = {"checks": _round12(report.as_dict()),
               "all_passed": report.all_passed,
               "meta": _round12(meta)}
    return canonical_json(payload)


# ---------------------------------------------------------------------------
# the run loop
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    exit_code: int
    series: list
    pinch: list
    report: TheoremReport | None
    output_dir: str
    aborted: str | None = None


def run_scenario(config: RunConfig, resume: str | None = None,
                 dump_geometry: bool = False) -> RunResult:
    """Execute a configured run and write the output layout.

    Exit status 0 means every asserted theorem check passed; 2 flags a
    numerical abort (partial outputs are still written); configuration
    errors raise ConfigError before anything runs (exit 1 at the CLI).
    """
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)
    cfg_hash, sc_hash = config_hashes(config)

    bundle = build_bundle(config)
    geometry, fam, ctx = bundle.geometry, bundle.fam, bundle.ctx

    with open(os.path.join(out, "config.echo.json"), "w",
              encoding="utf-8") as fh:
        fh.write(canonical_json(config.normalized))
    if dump_geometry:
        write_geometry_dumps(out, bundle)

    n_records = int(np.floor(config.t_end / config.cadence + 1e-9)) + 1
    start_index = 0
    if resume is not None:
        t0, phi_arr, ck_cfg, ck_sc = load_checkpoint(resume)
        if ck_cfg != cfg_hash or ck_sc != sc_hash:
            raise ConfigError("checkpoint does not match this configuration")
        from .fields import RealScalarField
        phi = RealScalarField(phi_arr, config.grid, "interior")
        rhs, g = ma_rhs(phi, fam, t0, geometry,
                        config.stepper.admissibility_floor)
        state = FlowState(t=t0, phi=phi, phidot_cache=rhs, phidot_prev=None,
                          dt_last=0.0, step_count=0,
                          admissibility_min=g.admissibility_min,
                          metric_cache=g)
        start_index = int(round(t0 / config.cadence)) + 1
    else:
        state = init_state(bundle.semiflat.rho, fam, geometry, config.stepper)

    series: list[DiagnosticsRecord] = []
    pinch: list[PinchSample] = []
    aborted = None
    if resume is None:
        rec, ps = record_snapshot(state, ctx)
        series.append(rec)
        pinch.append(ps)
    try:
        for k in range(start_index if resume else 1, n_records):
            t_target = k * config.cadence
            while state.t < t_target - 1e-12:
                state = step(state, config.stepper, fam, geometry,
                             dt_cap=t_target - state.t)
            rec, ps = record_snapshot(state, ctx)
            series.append(rec)
            pinch.append(ps)
            if k % config.checkpoint_every == 0 or k == n_records - 1:
                save_checkpoint(
                    os.path.join(out, "checkpoints", f"ckpt_{k:05d}.crfl"),
                    state.t, state.phi.values, cfg_hash, sc_hash)
    except (AdmissibilityError, StepFailure, SingularMetricError) as exc:
        aborted = f"{type(exc).__name__}: {exc}"

    with open(os.path.join(out, "series.csv"), "w", encoding="utf-8",
              newline="") as fh:
        fh.write(series_csv_text(series))

    report = None
    if aborted is None:
        thresholds = dict(config.thresholds)
        try:
            report = theorem_checks(series, pinch, config.scenario.kind,
                                    fam.T_I, thresholds)
        except InsufficientDataError as exc:
            aborted = f"InsufficientDataError: {exc}"
    if report is not None:
        meta = {
            "scenario": config.scenario.kind,
            "mode": config.grid.mode,
            "T_I": fam.T_I,
            "einstein_residual": fam.einstein_residual,
            "integral_ratio": fam.integral_ratio,
            "t_end": config.t_end,
            "records": len(series),
        }
        with open(os.path.join(out, "report.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(report_json_text(report, meta))
        exit_code = EXIT_OK if report.all_passed else EXIT_NUMERICAL
    else:
        with open(os.path.join(out, "report.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(canonical_json({"aborted": aborted,
                                     "records": len(series)}))
        exit_code = EXIT_NUMERICAL
    return RunResult(exit_code=exit_code, series=series, pinch=pinch,
                     report=report, output_dir=out, aborted=aborted)


def write_geometry_dumps(out: str, bundle: Bundle):
    """CSV dumps of the octagon, classification/ghost table and the scenario
    coefficient grids."""
    geo, grid = bundle.geometry, bundle.config.grid
    dump_dir = os.path.join(out, "dumps")
    os.makedirs(dump_dir, exist_ok=True)
    group = geo.group
    centers, crad = group.side_circles()
    with open(os.path.join(dump_dir, "octagon.csv"), "w",
              encoding="utf-8") as fh:
        fh.write("kind,index,re,im,extra\n")
        rv = group.vertex_radius
        for k in range(8):
            v = rv * np.exp(1j * (2 * k + 1) * np.pi / 8)
            fh.write(f"vertex,{k},{_fmt(v.real)},{_fmt(v.imag)},\n")
        for k in range(8):
            fh.write(f"side_circle,{k},{_fmt(centers[k].real)},"
                     f"{_fmt(centers[k].imag)},{_fmt(crad)}\n")
    gy, gx = geo._ghost_iy, geo._ghost_ix
    gid = {(int(gy[i]), int(gx[i])): i for i in range(geo.n_ghost)}
    with open(os.path.join(dump_dir, "classification.csv"), "w",
              encoding="utf-8") as fh:
        fh.write("iy,ix,class,target_re,target_im,word_length\n")
        for iy in range(grid.base_ny):
            for ix in range(grid.base_nx):
                if geo.interior[iy, ix]:
                    fh.write(f"{iy},{ix},interior,,,\n")
                elif geo.ghost[iy, ix]:
                    k = gid[(iy, ix)]
                    t = geo.targets[k]
                    fh.write(f"{iy},{ix},ghost,{_fmt(t.real)},"
                             f"{_fmt(t.imag)},{len(geo.words[k])}\n")
                else:
                    fh.write(f"{iy},{ix},exterior,,,\n")
    for name, arr in (("omega0_c11", bundle.scenario.w0.c11),
                      ("omega0_c22", bundle.scenario.w0.c22),
                      ("omega_flat_c11", bundle.fam.flat11),
                      ("omega_flat_c22", bundle.fam.flat22),
                      ("Omega_coeff", bundle.fam.omega_coeff)):
        flat = np.asarray(arr, dtype=float)
        if grid.mode == "full":
            flat = flat.mean(axis=(2, 3))
        with open(os.path.join(dump_dir, f"{name}.csv"), "w",
                  encoding="utf-8") as fh:
            for iy in range(flat.shape[0]):
                fh.write(",".join(_fmt(v) for v in flat[iy]) + "\n")
