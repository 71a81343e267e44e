"""
Validated run configuration for the experiments CLI.

Precedence: command-line flags > key=value config file > defaults.
"""

import logging
import os
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from compact_operator import OperatorVariant
from free_boundary import CurvatureMethod
from integrator import Method, StepControl
from market_model import MarketParams, preset
from solver_errors import ConfigurationError
from stencil_factory import BoundaryScheme, GridSpec, NodeDistribution, boundary_scheme

logger = logging.getLogger(__name__)

LIST_FIELDS = ("gamma", "spots", "ladder", "rhos", "ks", "vols", "rates")


def _split_floats(value):
    if isinstance(value, str):
        return [float(v) for v in value.replace(";", ",").split(",") if v.strip()]
    return value


class RunConfig(BaseModel):
    """Everything a subcommand needs to set up a solve"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    preset: Literal["ex-a", "ex-b", "ex-c"] = "ex-c"
    strike: Optional[float] = None
    rate: Optional[float] = None
    vol: Optional[float] = None
    maturity: Optional[float] = None

    h: float = 0.01
    xmax: float = 3.0
    variant: Literal["b4", "b5", "b6"] = "b5"
    scheme: Literal["cs55", "cs54"] = "cs54"
    gamma: tuple[float, ...] = (2.0, 3.0, 4.0, 5.0)

    eps: float = 1e-4
    rho: float = 0.9
    swap_exponents: bool = False
    method: Literal["bs32", "ssprk3"] = "bs32"
    k: Optional[float] = None
    curvature: Literal["flow", "stencil"] = "flow"

    spots: tuple[float, ...] = (90.0, 100.0, 110.0)
    out: Optional[str] = None
    binomial_steps: int = 15000

    ladder: tuple[float, ...] = (0.05, 0.025, 0.0125, 0.00625)
    rhos: tuple[float, ...] = ()
    ks: tuple[float, ...] = ()
    vols: tuple[float, ...] = ()
    rates: tuple[float, ...] = ()

    @field_validator(*LIST_FIELDS, mode="before")
    @classmethod
    def parse_lists(cls, value):
        return _split_floats(value)

    @field_validator("h", "xmax", "eps")
    @classmethod
    def positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError(f"must be positive, got {value}")
        return value

    @field_validator("rho")
    @classmethod
    def safety_factor(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError(f"safety factor must lie in (0, 1), got {value}")
        return value

    @field_validator("spots", "ladder", "ks", "vols")
    @classmethod
    def all_positive(cls, values: tuple) -> tuple:
        if any(not v > 0 for v in values):
            raise ValueError(f"entries must be positive, got {values}")
        return values

    @model_validator(mode="after")
    def consistent(self) -> "RunConfig":
        try:
            params = self.market_params()
            params.require_free_boundary()
            grid = self.grid()
            expected = 4 if self.scheme == "cs54" else 5
            if len(self.gamma) != expected:
                raise ConfigurationError(f"{self.scheme} takes {expected} offsets, got {len(self.gamma)}")
            dist = NodeDistribution.complete(self.gamma)
            if not dist.is_integer:
                raise ConfigurationError(f"offsets must be integers, got {self.gamma}")
            if max(self.gamma) > grid.n_x - 1:
                raise ConfigurationError(f"gamma {max(self.gamma):g} reaches past the last interior node")
            if self.method == "ssprk3" and not (self.k and self.k > 0):
                raise ConfigurationError("ssprk3 needs a fixed step --k")
        except ConfigurationError as e:
            raise ValueError(str(e)) from None
        return self

    def market_params(self) -> MarketParams:
        base = preset(self.preset)
        return MarketParams(
            strike=self.strike if self.strike is not None else base.strike,
            rate=self.rate if self.rate is not None else base.rate,
            volatility=self.vol if self.vol is not None else base.volatility,
            maturity=self.maturity if self.maturity is not None else base.maturity,
        )

    def grid(self, h: Optional[float] = None) -> GridSpec:
        return GridSpec.from_spacing(self.xmax, h or self.h)

    def boundary_scheme(self) -> BoundaryScheme:
        return boundary_scheme(self.scheme, self.gamma)

    def operator_variant(self) -> OperatorVariant:
        return OperatorVariant(self.variant)

    def step_control(self, rho: Optional[float] = None) -> StepControl:
        return StepControl(eps=self.eps, rho=rho or self.rho, swap_exponents=self.swap_exponents)

    def solve_method(self) -> Method:
        return Method(self.method)

    def curvature_method(self) -> CurvatureMethod:
        return CurvatureMethod(self.curvature)

    @property
    def label(self) -> str:
        gammas = ",".join(f"{g:g}" for g in self.gamma)
        return f"{self.scheme.upper()}({gammas})"


def load_config_file(path: str) -> dict:
    """Read a flat key = value file; keys are long flag names"""
    values = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    logger.debug(f"loaded {len(values)} settings from {path}")
    return values


def solver_threads() -> int:
    """Process-pool size from SOLVER_THREADS, default CPU count"""
    raw = os.environ.get("SOLVER_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigurationError(f"SOLVER_THREADS must be an integer, got {raw!r}") from None
    if threads < 1:
        raise ConfigurationError(f"SOLVER_THREADS must be >= 1, got {threads}")
    return threads
