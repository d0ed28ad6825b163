"""Golden-value registry: distinguished shooting values computed once at tight
tolerance and compared against on later runs."""
from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .params import Params, _fmt

DEFAULT_PATH = Path(__file__).with_name("data") / "registry.json"
COMPARE_REL = 1e-6


def key_astar(params: Params) -> str:
    return params.key


def key_a_of_k(params: Params, K: float) -> str:
    return f"{params.key},K={_fmt(K)}"


def key_vss(params: Params) -> str:
    return f"{params.key},vss"


def key_pme(m: float, dim: int, theta: float, l: float) -> str:
    return f"m={_fmt(m)},N={dim},theta={_fmt(theta)},l={_fmt(l)}"


@dataclass(frozen=True)
class Delta:
    key: str
    stored: Optional[float]
    computed: float

    @property
    def rel(self) -> Optional[float]:
        if self.stored is None:
            return None
        return abs(self.computed - self.stored) / abs(self.stored)

    @property
    def ok(self) -> bool:
        return self.rel is not None and self.rel <= COMPARE_REL

    def to_dict(self) -> dict:
        return {"key": self.key, "stored": self.stored, "computed": self.computed, "rel": self.rel}


class Registry:
    def __init__(self, path=None):
        self.path = Path(path) if path is not None else DEFAULT_PATH
        self.entries: dict = {}
        if self.path.exists():
            text = self.path.read_text().strip()
            self.entries = json.loads(text) if text else {}

    def __contains__(self, key):
        return key in self.entries

    def __len__(self):
        return len(self.entries)

    def value(self, key: str) -> float:
        try:
            return float(self.entries[key]["value"])
        except KeyError:
            raise KeyError(f"registry has no entry {key!r} ({self.path})") from None

    def put(self, key: str, value: float, tol: float, integrator_settings: dict, kind: str):
        self.entries[key] = {
            "kind": kind,
            "value": float(value),
            "tol": float(tol),
            "integrator_settings": integrator_settings,
            "date": _dt.date.today().isoformat(),
        }

    def compare(self, key: str, computed: float) -> Delta:
        stored = self.entries.get(key, {}).get("value")
        return Delta(key, None if stored is None else float(stored), float(computed))

    def save(self, path=None):
        out = Path(path) if path is not None else self.path
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(self.entries, indent=2, sort_keys=True) + "\n")
