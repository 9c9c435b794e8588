"""Built-in scenarios and scenario loading."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Mapping

import yaml

from .env import Scenario
from .errors import ConfigError


def _stationary(name, means, traffic, horizon, description):
    return {
        "name": name,
        "description": description,
        "k": len(means),
        "horizon": horizon,
        "traffic": traffic,
        "arms": [{"schedule": {"kind": "constant", "value": m}} for m in means],
    }


# Invented numbers. A has a one-day edge, then two heavy days at equal means
# send most traffic to A. After that both arms decline and B leads every day,
# yet A's large early mass keeps its pooled mean ahead. B has the larger
# cumulative gain over the full horizon.
CASE_STUDY = {
    "name": "case_study",
    "description": "Two arms; an early edge and batched Thompson sampling produce Simpson's paradox",
    "k": 2,
    "horizon": 14,
    "traffic": [1000, 10000, 10000] + [1000] * 11,
    "arms": [
        {
            "schedule": {
                "kind": "table",
                "values": [0.5, 0.4, 0.4, 0.25, 0.23, 0.21, 0.19, 0.17, 0.15, 0.13, 0.11, 0.09, 0.07, 0.05],
            }
        },
        {
            "schedule": {
                "kind": "table",
                "values": [0.4, 0.4, 0.4, 0.31, 0.29, 0.27, 0.25, 0.23, 0.21, 0.19, 0.17, 0.15, 0.13, 0.11],
            }
        },
    ],
}

BUILTIN_SCENARIOS: dict[str, dict] = {
    "case_study": CASE_STUDY,
    "stationary_2arm": _stationary(
        "stationary_2arm", [0.6, 0.3], 1000, 10, "Stationary, two arms, wide gap"
    ),
    "stationary_3arm": _stationary(
        "stationary_3arm", [0.5, 0.45, 0.4], 2000, 200, "Stationary, three arms, gaps 0.05 and 0.1"
    ),
    "equal_means": _stationary(
        "equal_means", [0.5, 0.5], 1000, 200, "Stationary, two identical arms"
    ),
    "easy_2arm": _stationary(
        "easy_2arm", [0.9, 0.1], 10000, 50, "Stationary, two arms, extreme gap"
    ),
    "gap_0.1": _stationary("gap_0.1", [0.5, 0.4], 1000, 200, "Stationary, two arms, gap 0.1"),
    "gap_0.05": _stationary("gap_0.05", [0.5, 0.45], 1000, 200, "Stationary, two arms, gap 0.05"),
    "reversal": {
        "name": "reversal",
        "description": "Arm 0 leads for five days, then arm 1 wins on cumulative gain",
        "k": 2,
        "horizon": 20,
        "traffic": 1000,
        "arms": [
            {"schedule": {"kind": "piecewise", "breaks": [6], "values": [0.9, 0.1]}},
            {"schedule": {"kind": "constant", "value": 0.5}},
        ],
    },
}


def builtin_scenario(name: str) -> Scenario:
    if name not in BUILTIN_SCENARIOS:
        raise ConfigError(
            f"unknown scenario {name!r}; built-ins are {', '.join(sorted(BUILTIN_SCENARIOS))}",
            field="scenario",
        )
    return Scenario.from_config(copy.deepcopy(BUILTIN_SCENARIOS[name]))


def load_scenario(ref: str | Mapping[str, Any], base_dir: Path | None = None) -> Scenario:
    """Resolve a built-in name, a YAML file path, or an inline mapping."""
    if isinstance(ref, Mapping):
        return Scenario.from_config(ref)
    if ref in BUILTIN_SCENARIOS:
        return builtin_scenario(ref)
    path = Path(ref)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    if not path.is_file():
        raise ConfigError(f"{ref!r} is neither a built-in scenario nor a file", field="scenario")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{path}: {exc}", line=None if mark is None else mark.line + 1) from exc
    if isinstance(data, Mapping) and "scenario" in data and isinstance(data["scenario"], Mapping):
        data = data["scenario"]
    return Scenario.from_config(data, name=None)
