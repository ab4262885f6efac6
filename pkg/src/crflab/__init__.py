"""Normalized Chern-Ricci flow on elliptic torus bundles over the Bolza
surface: a scalar Monge-Ampere solver plus a verification lab for the
collapsing theory (decay rates, pinching, curvature windows, fiber collapse).
"""

from .grids import GridSpec
from .bolza import (BaseGeometry, FuchsianGroup, InvariantBump, MobiusMap,
                    build_bolza, domain_reduce, ke_factor)
from .fields import (Form11Field, HermitianMetricField, RealScalarField,
                     TopFormField, TorsionField)
from .scenarios import (ReferenceFamily, Scenario, ScenarioSpec, SemiFlatData,
                        build_initial_metric, build_reference, compute_TI,
                        solve_semiflat, verify_gauduchon)
from .flow import (FlowState, StepperConfig, init_state, ma_rhs,
                   metric_from_potential, residual_dotphi, step, tensor_step)
from .diagnostics import (DiagnosticsRecord, RateFit, TheoremReport, fit_rate,
                          record_snapshot, theorem_checks)
from .runner import RunConfig, normalize_config, parse_config, run_scenario

__version__ = "0.1.0"
