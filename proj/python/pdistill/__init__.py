"""Python access to the tabular policy distillation workbench."""

import json
from typing import Any, Dict, List, NamedTuple, Sequence

from . import _core
from ._core import (
    ConfigError,
    DegenerateCurve,
    InsufficientRuns,
    InvalidParams,
    area_speedup,
    counterexample_field,
    cross_entropy_minimizer,
    first_integral,
    preset_names,
    softmax,
)

__all__ = [
    "ConfigError",
    "DegenerateCurve",
    "EvalRow",
    "InsufficientRuns",
    "InvalidParams",
    "area_speedup",
    "counterexample_field",
    "cross_entropy_minimizer",
    "first_integral",
    "generate_world",
    "normalize_config",
    "parse_csv",
    "preset_names",
    "softmax",
    "summarize_csv",
    "sweep",
    "verify_report",
    "world_ascii",
]


class EvalRow(NamedTuple):
    mdp_seed: int
    run_seed: int
    method: str
    step: int
    ret_student: float
    ret_teacher_ref: float
    xent_student: float
    xent_teacher: float
    xent_uniform: float


def generate_world(seed: int, width: int = 20, height: int = 20, eta: float = 0.1,
                   p_term: float = 0.01) -> Dict[str, Any]:
    return json.loads(_core.generate_world_json(seed, width, height, eta, p_term))


def world_ascii(world: Dict[str, Any]) -> str:
    return _core.world_ascii(json.dumps(world))


def normalize_config(config: Dict[str, Any]) -> Dict[str, Any]:
    """Validates a config and fills in every default."""
    return json.loads(_core.normalize_config(json.dumps(config)))


def sweep(config: Dict[str, Any], parallelism: int = 1) -> str:
    """Runs a sweep and returns the merged CSV text."""
    return _core.sweep_csv(json.dumps(config), parallelism)


def parse_csv(text: str) -> List[EvalRow]:
    return [EvalRow(*r) for r in _core.parse_csv(text)]


def summarize_csv(text: str) -> Dict[str, Any]:
    return json.loads(_core.summarize_csv(text))


def verify_report(seed: int = 0, random_thetas: int = 10, ode_steps: int = 100000) -> Dict[str, Any]:
    return json.loads(_core.verify_report_json(seed, random_thetas, ode_steps))
