"""Service configuration: JSON config file plus environment overrides.

Recognized environment variables: LL_CONFIG (config file path), LL_DATA_DIR
(data directory), LL_BIND (host:port).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import SpecError

ENV_CONFIG = "LL_CONFIG"
ENV_DATA_DIR = "LL_DATA_DIR"
ENV_BIND = "LL_BIND"

DEFAULT_BIND = "127.0.0.1:8000"


@dataclass
class SearchDefaults:
    n: int = 8
    sigma: float = 0.3
    alpha: float = 1.0
    rounds: int = 10
    quorum: int = 10


@dataclass
class LadderSpec:
    min_side: int = 16
    max_side: int = 64
    steps: int = 4


@dataclass
class ServiceConfig:
    model_path: Path | None = None
    data_dir: Path = Path("data")
    bind: str = DEFAULT_BIND
    corpus_dir: Path | None = None
    search: SearchDefaults = field(default_factory=SearchDefaults)
    ladder: LadderSpec = field(default_factory=LadderSpec)
    per_size: int = 10
    lineup_render_side: int = 64

    @property
    def host(self) -> str:
        return self.bind.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        try:
            return int(self.bind.rsplit(":", 1)[1])
        except (IndexError, ValueError):
            raise SpecError(f"bind address must be host:port, got {self.bind!r}")


def load_config(path: str | Path | None = None, env: dict | None = None) -> ServiceConfig:
    """Build a ServiceConfig from an optional JSON file and the environment."""
    env = os.environ if env is None else env
    if path is None:
        path = env.get(ENV_CONFIG)
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise SpecError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise SpecError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise SpecError(f"config file {path} must hold a JSON object")
    cfg = ServiceConfig()
    if "model_path" in doc:
        cfg.model_path = Path(doc["model_path"])
    if "data_dir" in doc:
        cfg.data_dir = Path(doc["data_dir"])
    if "bind" in doc:
        cfg.bind = str(doc["bind"])
    if "corpus_dir" in doc:
        cfg.corpus_dir = Path(doc["corpus_dir"])
    if "per_size" in doc:
        cfg.per_size = int(doc["per_size"])
    if "lineup_render_side" in doc:
        cfg.lineup_render_side = int(doc["lineup_render_side"])
    for name, value in doc.get("search", {}).items():
        if not hasattr(cfg.search, name):
            raise SpecError(f"unknown search default {name!r}")
        setattr(cfg.search, name, type(getattr(cfg.search, name))(value))
    for name, value in doc.get("ladder", {}).items():
        if not hasattr(cfg.ladder, name):
            raise SpecError(f"unknown ladder field {name!r}")
        setattr(cfg.ladder, name, int(value))
    if env.get(ENV_DATA_DIR):
        cfg.data_dir = Path(env[ENV_DATA_DIR])
    if env.get(ENV_BIND):
        cfg.bind = env[ENV_BIND]
    return cfg
