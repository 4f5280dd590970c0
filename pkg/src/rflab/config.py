"""Run configuration (TOML).

A run is described by one TOML file, see `config.example.toml` in the
repository. When `--config` is not given the CLI falls back to
`DEFAULT_CONFIG_PATH`.

Sections can be written as tables or as flat dotted keys, one per line:

    scenario.preset = "dumbbell"
    scenario.neck_radius = 0.2
    grid.node_count = 301
    audits.hypothesis = true
    audits.noncollapse.radii = [0.1, 0.2]

Flat `scenario.<key>` entries that are not scenario fields are preset
parameters and land in `scenario.params`.

This module keeps:
- the config path definition in a single place,
- the typed dataclasses the rest of the code works with,
- validation with line numbers for parse errors and unknown names.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import toml

from .errors import ConfigError, ParameterError
from .estimates import NonInflateConstants
from .flow import PRESET_PARAMS, PRESETS, FlowController
from .geometry import QuotientResolution
from .singular import ClassificationParams
from .spectral import SobolevConstants

DEFAULT_CONFIG_PATH: Path = Path("~/.rflab/config.toml").expanduser()


@dataclass
class ScenarioConfig:
    """Initial metric, or a static background when `static` is set."""

    preset: str = "round_sphere"
    params: Dict[str, Any] = field(default_factory=dict)
    static: bool = False
    # static backgrounds only
    static_times: List[float] = field(default_factory=lambda: [0.0, 1.0])
    singular_time: Optional[float] = None


@dataclass
class GridConfig:
    node_count: int = 400
    dim: int = 4


@dataclass
class ControllerConfig:
    cfl_fraction: float = 0.1
    max_steps: int = 2_000_000
    stop_min_psi: float = 1e-2
    stop_max_rm: float = 1e6
    checkpoint_stride: float = 1e-3
    regrid_policy: str = "none"
    t_max: float = math.inf

    def to_controller(self) -> FlowController:
        return FlowController(**asdict(self))


@dataclass
class ConstantSet:
    """Named constants shared by the audits.

    Entries left as None are fitted (the audit reports the minimal value
    that would make the inequality hold).
    """

    # Sobolev pair and the L^{n/2+sigma} bound on R
    A: float = 1.0
    B: float = 1.0
    sigma: float = 0.5
    L: float = 1e5
    # volume ratios
    sigma0: Optional[float] = None
    sigma1: Optional[float] = None
    # curvature integrals
    K0: Optional[float] = None
    c1_hat: Optional[float] = None
    c2_hat: Optional[float] = None
    alpha: float = 0.05
    # heat kernel
    c0: Optional[float] = None
    c1: float = 1.0
    c2: float = 1.0
    C0: float = 1.0
    E: float = 0.0
    kappa: float = 1.0
    alpha_J: float = 0.0
    beta_J: float = 0.0
    B_low: float = 1.0
    # Moser iteration
    ell: float = 1.0
    alpha_u: float = 1.0
    gamma: Optional[float] = None
    # classification
    eps0: float = 1.0
    R_big: float = 1.0
    Lambda: float = 2.0

    def sobolev(self) -> SobolevConstants:
        return SobolevConstants(A=self.A, B=self.B)

    def noninflate(self) -> NonInflateConstants:
        return NonInflateConstants(
            c1=self.c1,
            c2=self.c2,
            C0=self.C0,
            alpha_J=self.alpha_J,
            beta_J=self.beta_J,
            B_low=self.B_low,
            E=self.E,
            kappa=self.kappa,
        )

    def classification(self, **overrides: Any) -> ClassificationParams:
        return ClassificationParams(
            eps0=self.eps0,
            R_big=self.R_big,
            alpha=self.alpha,
            Lambda=self.Lambda,
            **overrides,
        )


@dataclass
class QuotientConfig:
    s_nodes: int = 81
    alpha_nodes: int = 129

    def resolution(self) -> QuotientResolution:
        return QuotientResolution(s_nodes=self.s_nodes, alpha_nodes=self.alpha_nodes)


@dataclass
class AuditSpec:
    name: str
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    constants: ConstantSet = field(default_factory=ConstantSet)
    quotient: QuotientConfig = field(default_factory=QuotientConfig)
    audits: List[AuditSpec] = field(default_factory=list)
    output_dir: Path = Path("rflab-out")
    seed: int = 0

    def scaled(self, k: float) -> "RunConfig":
        """Node counts and quotient mesh sizes multiplied by k."""
        if not k > 0.0:
            raise ParameterError(f"resolution scale must be positive, got {k}")
        if k == 1.0:
            return self
        res = self.quotient.resolution().scaled(k)
        return replace(
            self,
            grid=replace(self.grid, node_count=max(int(round(self.grid.node_count * k)), 16)),
            quotient=QuotientConfig(s_nodes=res.s_nodes, alpha_nodes=res.alpha_nodes),
        )


def _line_of(text: str, needle: str) -> Optional[int]:
    pattern = re.compile(re.escape(needle))
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pattern.search(line.split("#", 1)[0]):
            return lineno
    return None


def _section(cls: type, data: Any, name: str, text: str) -> Any:
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"[{name}] must be a table", _line_of(text, name))
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key {name}.{unknown[0]}", _line_of(text, unknown[0]))
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}", _line_of(text, f"[{name}]")) from exc


def _fold_scenario(data: Any, text: str) -> Any:
    """Move flat `scenario.<param>` keys into `scenario.params`."""
    if not isinstance(data, dict):
        return data
    known = {f.name for f in fields(ScenarioConfig)}
    extra = {k: v for k, v in data.items() if k not in known}
    if not extra:
        return data
    preset = data.get("preset", ScenarioConfig.preset)
    allowed = PRESET_PARAMS.get(preset, ())
    for key in sorted(extra):
        if key not in allowed:
            raise ConfigError(f"unknown key scenario.{key}", _line_of(text, key))
    params = dict(data.get("params") or {})
    clash = sorted(set(extra) & set(params))
    if clash:
        raise ConfigError(f"scenario.{clash[0]} is set twice", _line_of(text, clash[0]))
    folded = {k: v for k, v in data.items() if k in known}
    folded["params"] = {**extra, **params}
    return folded


def _audit_entries(data: Any, text: str) -> List[Dict[str, Any]]:
    """`[[audits]]` tables, or flat `audits.<name>.<param>` / `audits.<name> = true` keys."""
    if isinstance(data, list):
        return data
    if not isinstance(data, dict):
        raise ConfigError("audits must be a list of tables or audits.<name> keys", _line_of(text, "audits"))
    entries: List[Dict[str, Any]] = []
    for name, params in data.items():
        if params is True:
            entries.append({"name": name})
        elif isinstance(params, dict):
            entries.append({"name": name, **params})
        elif params is not False:
            raise ConfigError(f"audits.{name} must be true, false or a table", _line_of(text, f"audits.{name}"))
    return entries


def _known_audits() -> Iterable[str]:
    from .audits import AUDITS

    return AUDITS.keys()


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = toml.loads(text)
    except toml.TomlDecodeError as exc:
        raise ConfigError(f"{source}: {exc.msg}", exc.lineno) from exc

    top = {"scenario", "grid", "controller", "constants", "quotient", "audits", "output_dir", "seed"}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", _line_of(text, unknown[0]))

    scenario = _section(ScenarioConfig, _fold_scenario(data.get("scenario"), text), "scenario", text)
    if scenario.preset not in PRESETS:
        raise ConfigError(
            f"unknown preset {scenario.preset!r}; available: {', '.join(PRESETS)}",
            _line_of(text, scenario.preset),
        )
    if scenario.static and len(scenario.static_times) < 1:
        raise ConfigError("static scenario needs static_times", _line_of(text, "static_times"))

    grid = _section(GridConfig, data.get("grid"), "grid", text)
    if grid.node_count < 16:
        raise ConfigError("grid.node_count must be at least 16", _line_of(text, "node_count"))

    controller = _section(ControllerConfig, data.get("controller"), "controller", text)
    try:
        controller.to_controller()
    except ParameterError as exc:
        raise ConfigError(f"[controller]: {exc}", _line_of(text, "[controller]")) from exc

    constants = _section(ConstantSet, data.get("constants"), "constants", text)
    try:
        constants.sobolev()
        constants.noninflate()
    except ParameterError as exc:
        raise ConfigError(f"[constants]: {exc}", _line_of(text, "[constants]")) from exc

    quotient = _section(QuotientConfig, data.get("quotient"), "quotient", text)
    if quotient.s_nodes < 9 or quotient.alpha_nodes < 9:
        raise ConfigError("quotient mesh needs at least 9 nodes per axis", _line_of(text, "[quotient]"))

    known = set(_known_audits())
    audits: List[AuditSpec] = []
    for entry in _audit_entries(data.get("audits", []), text):
        params = dict(entry)
        name = params.pop("name", None)
        if name not in known:
            raise ConfigError(
                f"unknown audit {name!r}; see `rflab describe audits`",
                _line_of(text, str(name)) if name else _line_of(text, "[[audits]]"),
            )
        audits.append(AuditSpec(name=name, params=params))

    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer", _line_of(text, "seed"))

    return RunConfig(
        scenario=scenario,
        grid=grid,
        controller=controller,
        constants=constants,
        quotient=quotient,
        audits=audits,
        output_dir=Path(data.get("output_dir", "rflab-out")).expanduser(),
        seed=seed,
    )


def load_run_config(path: Optional[Path] = None) -> RunConfig:
    """Load and validate a run configuration.

    Falls back to `DEFAULT_CONFIG_PATH` when no path is given.
    """
    path = path or DEFAULT_CONFIG_PATH
    if not path.exists():
        raise ConfigError(
            f"config file not found at {path}; copy config.example.toml and adjust it"
        )
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_run_config(text, source=str(path))


__all__ = [
    "DEFAULT_CONFIG_PATH",
    "AuditSpec",
    "ConstantSet",
    "ControllerConfig",
    "GridConfig",
    "QuotientConfig",
    "RunConfig",
    "ScenarioConfig",
    "load_run_config",
    "parse_run_config",
]
