"""Built-in scenarios, addressable by name from the command line."""

from __future__ import annotations

import copy

from .sim import ScenarioError

# TC0 offers ~6x its MAM constraint while TC1/TC2 stay light, so MAM blocks
# TC0 heavily and idle TC1/TC2 bandwidth is there to be borrowed.
MAM_OVERLOAD = {
    "name": "mam-overload",
    "seed": 2011,
    "capacity": 1024,
    "bam": "MAM",
    "bcs": [256, 512, 1024],
    "tolerance": {
        "name": "Carlos",
        "blocking": [70, 65, 60],
        "preemption": [80, 70, 0],
        "devolution": [0, 70, 80],
        "min_utilization": [0, 0, 0],
    },
    "traffic": {
        "phases": [
            {
                "duration": 12,
                "rates": [40, 6, 8],
                "demand": [
                    {"kind": "fixed", "value": 40},
                    {"kind": "uniform", "min": 20, "max": 40},
                    {"kind": "uniform", "min": 30, "max": 60},
                ],
                "holding": 1.0,
            }
        ]
    },
    "window_length": 200,
    "windows": 12,
    "mode": "auto",
    "debounce": 2,
    "probe_windows": 3,
}

BUILTIN = {"mam-overload": MAM_OVERLOAD}


def builtin(name: str) -> dict:
    if name not in BUILTIN:
        raise ScenarioError(f"no built-in scenario {name!r}; choose from {sorted(BUILTIN)}")
    return copy.deepcopy(BUILTIN[name])
