"""Experiment configuration files (YAML) and their validation."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field

KINDS = ("solve-absvie", "check-duality", "check-comparison", "solve-game", "check-regularity", "simulate-sdvie")
Kind = Literal["solve-absvie", "check-duality", "check-comparison", "solve-game", "check-regularity", "simulate-sdvie"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridBlock(_Strict):
    T: float = Field(gt=0)
    K: float = Field(default=0.0, ge=0)
    steps: int = Field(ge=1)


class MCBlock(_Strict):
    paths: int = Field(ge=1)
    dims: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)


class BasisBlock(_Strict):
    degree: int = Field(default=3, ge=0)


class ProblemBlock(_Strict):
    name: str
    params: dict[str, Any] = Field(default_factory=dict)


class SolverBlock(_Strict):
    tol: float = Field(default=1e-10, gt=0)
    max_iter: int = Field(default=100, ge=1)
    damping: float = Field(default=0.5, gt=0, le=1)


class OutputBlock(_Strict):
    dir: str | None = None


class ExperimentConfig(_Strict):
    kind: Kind
    grid: GridBlock
    mc: MCBlock
    basis: BasisBlock = Field(default_factory=BasisBlock)
    problem: ProblemBlock
    solver: SolverBlock = Field(default_factory=SolverBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    def content_hash(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    return ExperimentConfig.model_validate(raw)
