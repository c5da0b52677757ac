"""Run configuration: one TOML file drives every command.

Sections mirror the library objects; every value has a default equal to the
built-in reference parameter set, so an empty (or absent) file is a valid
configuration. CLI flags override file values; the fully resolved
configuration is echoed next to each run's outputs.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ValidationError
from .flow import (DEFAULT_LAMBDA_SCALE, DEFAULT_LAMBDA_WEIGHTS, DEFAULT_SIZES,
                   IntensityShape, SizeLadder, TierIntensity)
from .hamiltonians import ExecutionCost
from .hjb import ModelParams


@dataclass
class ModelSection:
    sigma: float = 50.0
    impact_k: float = 5e-3
    gamma: float = 2e-3
    horizon_days: float = 0.05
    q_bound: float = 250.0
    grid_points: int = 501
    sizes: list = field(default_factory=lambda: list(DEFAULT_SIZES))
    eta: float = 1e-5
    phi: float = 0.1


@dataclass
class TiersSection:
    # either a fitted-tiers JSON produced by `calibrate`, or inline parameters
    file: str = ""
    alpha: list = field(default_factory=lambda: [-0.3, -1.9])
    beta: list = field(default_factory=lambda: [5.0, 15.0])
    lambda_scale: float = DEFAULT_LAMBDA_SCALE
    lambda_weights: list = field(default_factory=lambda: list(DEFAULT_LAMBDA_WEIGHTS))


@dataclass
class SolverSection:
    dt: float = 1e-4
    stationarity_tol: float = 1e-3
    policy_tol: float = 1e-10
    max_policy_iter: int = 50


@dataclass
class SimulationSection:
    n_paths: int = 1000
    horizon_days: float = 10.0
    step_days: float = 1e-5
    seed: int = 20240901
    record_step_days: float = 2e-4
    burn_in_fraction: float = 0.1
    event_log: bool = False


@dataclass
class FrontierSection:
    gammas: list = field(default_factory=lambda: [1e-4, 3.16e-4, 1e-3, 3.16e-3,
                                                  1e-2, 3.16e-2, 1e-1])
    n_perturbations: int = 20
    n_paths: int = 1000
    horizon_days: float = 0.05
    quote_shift_bps: float = 0.1
    scale_low: float = 0.5
    scale_high: float = 2.0


@dataclass
class CalibrationSection:
    n_tiers: int = 2
    restarts: int = 20
    seed: int = 20240901
    min_trades: int = 10
    gtol: float = 1e-7
    liquid_hours: list = field(default_factory=lambda: [6.0, 20.0])


@dataclass
class FilesSection:
    trades: str = ""
    quotes: str = ""
    strategy: str = ""  # optional pre-solved strategy CSV for `simulate`


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    tiers: TiersSection = field(default_factory=TiersSection)
    solver: SolverSection = field(default_factory=SolverSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    frontier: FrontierSection = field(default_factory=FrontierSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    files: FilesSection = field(default_factory=FilesSection)

    def ladder(self) -> SizeLadder:
        return SizeLadder(tuple(self.model.sizes))

    def resolve_tiers(self) -> list:
        if self.tiers.file:
            from .dataio import read_json, tiers_from_payload

            tiers, _ = tiers_from_payload(read_json(self.tiers.file))
            return tiers
        if len(self.tiers.alpha) != len(self.tiers.beta):
            raise ValidationError("tiers.alpha and tiers.beta lengths differ")
        if len(self.tiers.lambda_weights) != len(self.model.sizes):
            raise ValidationError("tiers.lambda_weights must match model.sizes")
        lams = tuple(self.tiers.lambda_scale * w for w in self.tiers.lambda_weights)
        return [TierIntensity(IntensityShape(a, b), lams)
                for a, b in zip(self.tiers.alpha, self.tiers.beta)]

    def to_model_params(self, gamma: float | None = None) -> ModelParams:
        m = self.model
        return ModelParams(
            sigma=m.sigma, impact_k=m.impact_k,
            gamma=m.gamma if gamma is None else gamma,
            horizon_days=m.horizon_days, tiers=self.resolve_tiers(),
            ladder=self.ladder(), cost=ExecutionCost(m.eta, m.phi),
            q_bound=m.q_bound, grid_points=m.grid_points)

    def resolved(self) -> dict:
        return asdict(self)


def _apply_section(obj, name: str, data: dict):
    known = {f.name for f in fields(obj)}
    for key, value in data.items():
        if key not in known:
            raise ValidationError(f"unknown key [{name}].{key}")
        setattr(obj, key, value)


def load_config(path=None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for name, body in data.items():
        if name not in sections:
            raise ValidationError(f"unknown config section [{name}]")
        if not isinstance(body, dict):
            raise ValidationError(f"[{name}] must be a table")
        _apply_section(sections[name], name, body)
    return cfg
