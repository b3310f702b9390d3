"""User settings file and the validated configuration of one CLI run."""

import json
import logging
import os
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

logger = logging.getLogger(__name__)

APP_NAME = "mf-varopt"


def settings_path():
    xdg = os.environ.get("XDG_CONFIG_HOME", os.path.expanduser("~/.config"))
    return Path(xdg) / APP_NAME / "settings.json"


class Settings(BaseModel):
    """Defaults that command-line flags override."""

    model_config = ConfigDict(extra="forbid")

    num_agents: int = Field(40, ge=2)
    particles: int = Field(100_000, gt=0)
    dt: float = Field(1e-3, gt=0)
    resolution: int = Field(200, ge=2)
    seed: int = 7
    format: Literal["csv", "json"] = "csv"


def load_settings(path=None):
    """Read the settings file; a missing or unreadable file gives the defaults.

    Unknown keys are not ignored: they raise pydantic.ValidationError.
    """
    path = Path(path) if path is not None else settings_path()
    if not path.exists():
        return Settings()
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        logger.warning("ignoring unreadable settings file %s: %s", path, exc)
        return Settings()
    return Settings.model_validate(data)


class RunConfig(BaseModel):
    """Everything one subcommand needs; dumped verbatim into JSON output."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    command: Literal["solve-discrete", "solve-meanfield", "converge", "gap-scan", "gronwall", "dichotomy", "figure"]
    lam: Optional[float] = Field(None, alias="lambda")
    horizon: float = Field(1.0, alias="T", gt=0)
    num_agents: int = Field(40, alias="N", ge=2)
    particles: int = Field(100_000, gt=0)
    dt: float = Field(1e-3, gt=0)
    seed: int = 7
    format: Literal["csv", "json"] = "csv"
    resolution: int = Field(200, ge=2)
    field: Literal["optimal", "mollified", "zero"] = "optimal"
    slope: float = Field(10.0, gt=0)
    slopes: tuple[float, ...] = (2.0, 8.0, 32.0, 128.0)
    n_list: tuple[int, ...] = (4, 16, 64, 256, 1024)
    lambda_list: tuple[float, ...] = ()
    pairs: int = Field(100, ge=1)
    snapshots: int = Field(11, ge=2)
    which: Optional[Literal[1, 2]] = None
    x0: float = 0.5

    @field_validator("lam")
    @classmethod
    def _nonzero_lambda(cls, v):
        if v is not None and v == 0:
            raise ValueError("lambda must be nonzero")
        return v

    @field_validator("num_agents")
    @classmethod
    def _even_agents(cls, v):
        if v % 2:
            raise ValueError("N must be even")
        return v

    @field_validator("n_list")
    @classmethod
    def _even_list(cls, v):
        if any(n < 2 or n % 2 for n in v):
            raise ValueError("every N must be even and at least 2")
        return v

    @field_validator("lambda_list")
    @classmethod
    def _nonzero_list(cls, v):
        if any(lam == 0 for lam in v):
            raise ValueError("lambda must be nonzero")
        return v

    @classmethod
    def from_args(cls, args, settings):
        """Merge parsed flags over settings; flags left at None fall back."""
        values = dict(settings.model_dump())
        values.update({k: v for k, v in vars(args).items() if v is not None and k in cls.model_fields})
        return cls.model_validate(values)

    def to_output(self):
        return self.model_dump(by_alias=True, exclude_none=True, mode="json")
