"""Run configuration (TOML) and reproducibility manifests."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .embeddings import DistanceConfig
from .metrics import MetricConfig
from .refine import RefinementConfig
from .routing import RoutingConfig


class ConfigError(Exception):
    pass


@dataclass
class Paths:
    trees_dir: str = "trees"
    initial_trees_dir: str = ""
    embeddings: str = ""
    test_embeddings: str = ""
    ground_truth: str = ""
    transcript: str = ""
    support_embeddings: str = ""
    support_manifest: str = ""
    output_dir: str = "out"


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    distance: DistanceConfig = field(default_factory=DistanceConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    classes: list[str] = field(default_factory=list)
    baselines: list[str] = field(default_factory=list)
    baseline_n_nodes: int = 5
    llm_mode: str = "replay"
    seed: int = 0
    config_dir: str = "."

    def resolve(self, path: str) -> str:
        if not path or os.path.isabs(path):
            return path
        return os.path.normpath(os.path.join(self.config_dir, path))

    def as_dict(self) -> dict:
        return {
            "paths": vars(self.paths),
            "refinement": vars(self.refinement),
            "routing": vars(self.routing),
            "distance": vars(self.distance),
            "metrics": vars(self.metrics),
            "classes": self.classes,
            "baselines": self.baselines,
            "baseline_n_nodes": self.baseline_n_nodes,
            "llm_mode": self.llm_mode,
            "seed": self.seed,
        }


def _section(data: dict, name: str, cls):
    raw = data.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid [{name}] section: {e}") from e


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"malformed TOML in {path}: {e}") from e

    base = data.get("baselines", {})
    if isinstance(base, dict):
        enabled = base.get("enabled", [])
        n_nodes = int(base.get("n_nodes", 5))
    else:
        enabled, n_nodes = list(base), 5

    cfg = RunConfig(
        paths=_section(data, "paths", Paths),
        refinement=_section(data, "refinement", RefinementConfig),
        routing=_section(data, "routing", RoutingConfig),
        distance=_section(data, "distance", DistanceConfig),
        metrics=_section(data, "metrics", MetricConfig),
        classes=list(data.get("classes", [])),
        baselines=list(enabled),
        baseline_n_nodes=n_nodes,
        llm_mode=str(data.get("llm", {}).get("mode", "replay")),
        seed=int(data.get("seed", 0)),
        config_dir=os.path.dirname(os.path.abspath(path)),
    )
    if cfg.llm_mode not in ("live", "replay"):
        raise ConfigError(f"llm mode must be live or replay, got {cfg.llm_mode!r}")
    return cfg


def _digest_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _digest_file(path: str) -> str:
    if not path or not os.path.exists(path):
        return ""
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(cfg: RunConfig, command: str, out_dir: str) -> str:
    """Reproducibility manifest: config digest, transcript digest, seed,
    and the refinement/llm parameters of the run. No timestamps, so two
    identical runs produce identical manifests."""
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "classes": cfg.classes,
        "categories": cfg.classes,
        "t_max": cfg.refinement.t_max,
        "prune_count": cfg.refinement.prune_count,
        "grow_count": cfg.refinement.grow_count,
        "epsilon": cfg.distance.epsilon,
        "llm_mode": cfg.llm_mode,
        "transcript_path": cfg.paths.transcript,
        "config_digest": _digest_text(
            json.dumps(cfg.as_dict(), sort_keys=True)),
        "transcript_digest": _digest_file(cfg.resolve(cfg.paths.transcript)),
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"manifest-{command}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
