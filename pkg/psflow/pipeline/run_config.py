"""
Run configuration: flat INI sections validated by pydantic models
"""
import configparser
import hashlib
import logging
import os
import re
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator, model_validator

import config
from numerics.core_types import (
    DEFAULT_EXTINCTION_EPS,
    DEFAULT_NEWTON_TOL,
    DEFAULT_QUAD_TOL,
    FlowParams,
    Field as GridField,
    Grid,
    GridMode,
    make_grid,
    make_params,
    normalize_initial,
)
from numerics.exceptions import ConfigError, PSFlowError
from numerics.initial_data import PRESETS, make_initial

logger = logging.getLogger(__name__)

SECTIONS = ("params", "grid", "initial", "solver", "diagnostics", "output")
_KEY_LINE = re.compile(r"^\s*([^=:#;\[\s][^=:]*?)\s*[=:]")
_SECTION_LINE = re.compile(r"^\s*\[([^\]]+)\]")


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ParamsBlock(_Block):
    n: int
    p: float
    newton_tol: float = Field(DEFAULT_NEWTON_TOL, gt=0.0, lt=1.0)
    quad_tol: float = Field(DEFAULT_QUAD_TOL, gt=0.0, lt=1.0)
    extinction_eps: float = Field(DEFAULT_EXTINCTION_EPS, gt=0.0, lt=1.0)

    @field_validator("n")
    @classmethod
    def dimension(cls, value: int) -> int:
        if value < 3:
            raise ValueError(f"n must satisfy n >= 3, got n={value}")
        return value

    @field_validator("p")
    @classmethod
    def exponent_range(cls, value: float, info: ValidationInfo) -> float:
        n = info.data.get("n")
        if n is not None:
            make_params(n, value)
        return value


class GridBlock(_Block):
    mode: GridMode
    extent: List[float]
    points: List[int]
    radial_dim: Optional[int] = None

    @field_validator("extent", "points", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split_list(value)

    @model_validator(mode="after")
    def check_axes(self):
        axes = 2 if self.mode == GridMode.CARTESIAN_2D else 1
        if len(self.extent) != axes or len(self.points) != axes:
            raise ValueError(f"{self.mode.value} grids need {axes} extent and points values")
        if any(e <= 0.0 for e in self.extent):
            raise ValueError("extent values must be positive")
        return self


class InitialBlock(_Block):
    preset: str = "bump"
    lam: float = Field(1.0, gt=0.0)
    center: Optional[List[float]] = None
    width: float = Field(0.1, gt=0.0)
    level: float = Field(1.0, gt=0.0)
    path: Optional[Path] = None

    @field_validator("center", mode="before")
    @classmethod
    def split_center(cls, value):
        return _split_list(value)

    @field_validator("preset")
    @classmethod
    def known_preset(cls, value: str) -> str:
        if value not in PRESETS:
            raise ValueError(f"unknown preset {value!r}; expected one of {', '.join(PRESETS)}")
        return value

    @model_validator(mode="after")
    def file_needs_path(self):
        if self.preset == "file" and self.path is None:
            raise ValueError("preset = file needs a path")
        return self


class SolverBlock(_Block):
    ds_init: float = Field(1e-4, gt=0.0)
    ds_min: float = Field(1e-7, gt=0.0)
    ds_max: float = Field(1e-2, gt=0.0)
    step_scale: float = Field(1e-2, gt=0.0)
    energy_budget: float = Field(1e-3, gt=0.0)
    max_steps: int = Field(200_000, ge=1)
    snapshot_every: int = Field(10, ge=1)
    snapshot_interval: float = Field(0.0, ge=0.0)
    dt: float = Field(1e-3, gt=0.0)
    t_end: Optional[float] = Field(None, gt=0.0)
    variant: Literal["projection", "source"] = "projection"
    record_every: int = Field(10, ge=1)
    map_samples: int = Field(2001, ge=3)

    @model_validator(mode="after")
    def ordered_steps(self):
        if not self.ds_min <= self.ds_init <= self.ds_max:
            raise ValueError("need ds_min <= ds_init <= ds_max")
        return self

    @property
    def direct_t_end(self) -> float:
        return self.t_end if self.t_end is not None else config.DIRECT_T_END


class DiagnosticsBlock(_Block):
    rho_cells: float = Field(1.0, gt=0.0)
    margin_cells: Optional[int] = Field(None, ge=0)
    levels: List[float] = [0.05]
    M_policy: str = "max"
    t_hat: Optional[float] = Field(None, gt=0.0)
    source: Literal["direct", "rescaled"] = "direct"
    talenti_lambda: float = Field(1.0, gt=0.0)
    normalization: Literal["sobolev", "printed"] = "sobolev"
    talenti_s: List[float] = []
    collar: int = Field(1, ge=0)
    residual_r_min: float = Field(0.1, ge=0.0)
    energy_s_stop: float = Field(0.05, gt=0.0)
    energy_interval: float = Field(4e-3, gt=0.0)
    refinement: bool = True
    seed: int = 0

    @field_validator("levels", "talenti_s", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split_list(value)

    @field_validator("levels")
    @classmethod
    def positive_levels(cls, value: List[float]) -> List[float]:
        if not value or any(L <= 0.0 for L in value):
            raise ValueError("levels must be a nonempty list of positive numbers")
        return value

    @field_validator("M_policy")
    @classmethod
    def known_policy(cls, value: str) -> str:
        if value in ("max", "max_u0"):
            return value
        try:
            if float(value) > 0.0:
                return value
        except ValueError:
            pass
        raise ValueError("M_policy must be max, max_u0 or a positive number")


class OutputBlock(_Block):
    directory: Optional[Path] = None
    samples: int = Field(21, ge=2)


class RunConfig(BaseModel):
    """Validated run configuration plus its source text and hash"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    params: ParamsBlock
    grid: GridBlock
    initial: InitialBlock = InitialBlock()
    solver: SolverBlock = SolverBlock()
    diagnostics: DiagnosticsBlock = DiagnosticsBlock()
    output: OutputBlock = OutputBlock()
    source: Optional[Path] = None
    text: str = ""

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def flow_params(self) -> FlowParams:
        p = self.params
        return make_params(p.n, p.p, newton_tol=p.newton_tol, quad_tol=p.quad_tol,
                           extinction_eps=p.extinction_eps)

    def make_grid(self, refine: int = 0) -> Grid:
        """The configured grid, or one with 2^refine times as many cells per axis"""
        g = self.grid
        points = [(n - 1) * 2 ** refine + 1 for n in g.points]
        radial_dim = g.radial_dim
        if g.mode == GridMode.RADIAL and radial_dim is None:
            radial_dim = self.params.n
        return make_grid(g.mode.value, g.extent, points, radial_dim=radial_dim)

    def initial_field(self, grid: Optional[Grid] = None) -> GridField:
        """Normalized initial data on grid (default: the configured grid)"""
        grid = grid or self.make_grid()
        init = self.initial
        raw = make_initial(init.preset, grid, self.flow_params(), lam=init.lam, center=init.center,
                           width=init.width, level=init.level, path=init.path)
        return normalize_initial(raw, self.flow_params())

    def out_dir(self, override: Optional[Union[str, Path]] = None) -> Path:
        """--out, then PSFLOW_OUT, then [output] directory, then the default root"""
        if override:
            return Path(override)
        env = os.getenv("PSFLOW_OUT")
        if env:
            return Path(env)
        if self.output.directory is not None:
            return self.output.directory
        return config.DEFAULT_OUT

    def resolved(self) -> Dict:
        """Every resolved value, for the run manifest"""
        data = self.model_dump(mode="json", exclude={"text", "source"})
        data["source"] = str(self.source) if self.source else None
        data["config_hash"] = self.config_hash
        return data


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    lines: Dict[Tuple[str, str], int] = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        header = _SECTION_LINE.match(line)
        if header:
            section = header.group(1).strip()
            lines[(section, "")] = number
            continue
        key = _KEY_LINE.match(line)
        if key and section:
            lines[(section, key.group(1).strip())] = number
    return lines


def parse_config(text: str, source: Optional[Path] = None) -> RunConfig:
    """
    Parse and validate INI text

    Args:
        text: Config file contents
        source: Path the text came from; relative initial paths resolve against its folder

    Returns:
        RunConfig

    Raises:
        ConfigError: With section, key and line of the first problem
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(source or "<config>"))
    except configparser.Error as e:
        raise ConfigError(f"unreadable config: {e}", line=getattr(e, "lineno", None))
    lines = _line_index(text)

    unknown = [name for name in parser.sections() if name not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section; expected one of {', '.join(SECTIONS)}",
                          section=unknown[0], line=lines.get((unknown[0], "")))
    for required in ("params", "grid"):
        if not parser.has_section(required):
            raise ConfigError("required section is missing", section=required)

    blocks = {name: dict(parser.items(name)) for name in parser.sections()}
    initial = blocks.get("initial", {})
    if initial.get("path"):
        path = Path(initial["path"])
        if not path.is_absolute() and source is not None:
            path = Path(source).parent / path
        if not path.exists():
            raise ConfigError(f"file {path} does not exist", section="initial", key="path",
                              line=lines.get(("initial", "path")))
        initial["path"] = str(path)

    try:
        run_config = RunConfig(**blocks, source=source, text=text)
    except ValidationError as e:
        error = e.errors()[0]
        loc = [str(part) for part in error["loc"]]
        section = loc[0] if loc else None
        key = loc[1] if len(loc) > 1 else None
        line = lines.get((section, key)) if key else lines.get((section, ""))
        raise ConfigError(error["msg"], section=section, key=key, line=line)
    except PSFlowError as e:
        raise ConfigError(str(e))
    logger.info(f"Loaded config {source or '<text>'} (sha256 {run_config.config_hash[:12]})")
    return run_config


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config(path.read_text(encoding="utf-8"), source=path)
