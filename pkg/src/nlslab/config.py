"""Experiment configuration: one JSON document with five sections."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .profile import BubbleConfig, ProfileError, default_rho
from .remainder import WeightedSpaceParams
from .spectral import DIRICHLET, DomainSpec

__all__ = ["ConfigError", "ExperimentConfig", "DEFAULT_CONFIG", "canonical_hash"]


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG: dict = {
    "domain": {
        "dimension": 2,
        "kind": DIRICHLET,
        "side_lengths": [1.0, 1.0],
        "grid_points": [255, 255],
    },
    "bubbles": {
        "points": [[0.25, 0.5], [0.75, 0.5]],
        "lambda": 100.0,
        "blow_time": 2e-4,
        "rho": None,
    },
    "ground_state": {"tol": 1e-10},
    "weighted_space": {
        "delta": "fit",
        "alpha": None,
        "tolerance": 1e-8,
        "max_iter": 50,
        "mesh_size": 400,
        "grading_ratio": 0.97,
    },
    "evolution": {
        "initial": "constructed",
        "dt_safety": 0.02,
        "dt_max": 1e-3,
        "t_end": None,
        "resolution_guard": 1e-4,
    },
    "output": {"directory": "nlslab-out", "snapshot_stride": 0, "seed": 0},
}

_SECTIONS = tuple(DEFAULT_CONFIG)


def canonical_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Resolved configuration; ``raw`` holds the merged JSON document."""

    raw: dict
    domain: DomainSpec
    bubbles: BubbleConfig

    @classmethod
    def from_dict(cls, data: dict | None = None) -> "ExperimentConfig":
        if data is not None and not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        raw = _merge(DEFAULT_CONFIG, data or {})
        try:
            domain = DomainSpec.from_json(raw["domain"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"domain: {exc}") from exc
        b = raw["bubbles"]
        try:
            points = [tuple(float(c) for c in x) for x in b["points"]]
            if not points:
                raise ConfigError("bubbles: at least one blow-up point is required")
            rho = default_rho(points, domain) if b["rho"] is None else float(b["rho"])
            bubbles = BubbleConfig(tuple(points), float(b["lambda"]), float(b["blow_time"]), rho)
            bubbles.validate(domain)
        except (ProfileError, TypeError, ValueError) as exc:
            raise ConfigError(f"bubbles: {exc}") from exc
        raw["bubbles"]["rho"] = rho
        ws = raw["weighted_space"]
        if ws["alpha"] is None:
            ws["alpha"] = WeightedSpaceParams.default_alpha(domain.dimension)
        if ws["delta"] != "fit":
            try:
                ws["delta"] = float(ws["delta"])
            except (TypeError, ValueError) as exc:
                raise ConfigError("weighted_space.delta must be a number or \"fit\"") from exc
        try:
            # validates α and δ bounds; δ placeholder when fitted later
            WeightedSpaceParams(
                delta=1.0 if ws["delta"] == "fit" else ws["delta"],
                alpha=float(ws["alpha"]),
                lam=bubbles.lam,
                blow_time=bubbles.blow_time,
                dimension=domain.dimension,
            )
        except ValueError as exc:
            raise ConfigError(f"weighted_space: {exc}") from exc
        if not 1e-12 <= float(ws["tolerance"]) <= 1e-4:
            raise ConfigError("weighted_space.tolerance must lie in [1e-12, 1e-4]")
        if int(ws["mesh_size"]) < 2 or int(ws["max_iter"]) < 1:
            raise ConfigError("weighted_space.mesh_size must be >= 2 and max_iter >= 1")
        if not 0 < float(ws["grading_ratio"]) < 1:
            raise ConfigError("weighted_space.grading_ratio must lie in (0, 1)")
        ev = raw["evolution"]
        if ev["initial"] not in ("constructed", "profile"):
            raise ConfigError("evolution.initial must be \"constructed\" or \"profile\"")
        if ev["t_end"] is None:
            ev["t_end"] = bubbles.blow_time
        if not 0 < float(ev["dt_safety"]) <= 1 or not float(ev["dt_max"]) > 0:
            raise ConfigError("evolution: dt_safety must lie in (0, 1] and dt_max be positive")
        if not 0 < float(ev["resolution_guard"]) < 0.5:
            raise ConfigError("evolution.resolution_guard must lie in (0, 0.5)")
        out = raw["output"]
        if int(out["snapshot_stride"]) < 0:
            raise ConfigError("output.snapshot_stride must be >= 0")
        if not 0 <= int(out["seed"]) < 2**64:
            raise ConfigError("output.seed must be an unsigned 64-bit integer")
        return cls(raw, domain, bubbles)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"configuration file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def section(self, name: str) -> dict:
        return self.raw[name]

    def section_hash(self, *names: str) -> str:
        return canonical_hash({n: self.raw[n] for n in names})

    def to_json(self) -> dict:
        return copy.deepcopy(self.raw)
