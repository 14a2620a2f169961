"""Gateway configuration loading.

Config files are JSON; relative paths resolve against the config file's
directory. ``ZTPOM_SEED`` in the environment overrides the configured
seed so replay runs can be pinned from outside.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

from ..errors import ZtpomError

SEED_ENV = "ZTPOM_SEED"


class ConfigError(ZtpomError):
    code = "config-error"


@dataclass
class GatewayConfig:
    listen: str = "127.0.0.1:8420"
    heartbeat_interval_ticks: int = 5
    miss_threshold: int = 3
    broker_lambda: float = 0.1
    seed: int = 0
    persistence_dir: Path | None = None
    topology_path: Path | None = None
    catalogue_path: Path | None = None
    default_owner: str = "customer"

    @property
    def host(self) -> str:
        return self.listen.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen.rsplit(":", 1)[1])

    @property
    def snapshot_path(self) -> Path | None:
        if self.persistence_dir is None:
            return None
        return self.persistence_dir / "snapshot.json"

    def check(self) -> None:
        if self.miss_threshold < 1:
            raise ConfigError(f"miss_threshold must be >= 1, got {self.miss_threshold}")
        if self.heartbeat_interval_ticks < 1:
            raise ConfigError("heartbeat_interval_ticks must be >= 1")
        for path in (self.topology_path, self.catalogue_path):
            if path is not None and not path.is_file():
                raise ConfigError(f"configured file not readable: {path}")


def _apply_seed_env(seed: int) -> int:
    override = os.environ.get(SEED_ENV)
    if override is None:
        return seed
    try:
        return int(override)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {override!r}") from exc


def load_config(path: str | Path) -> GatewayConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON at line {exc.lineno}") from exc

    base = path.parent

    def resolve(key):
        value = raw.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    cfg = GatewayConfig(
        listen=raw.get("listen", "127.0.0.1:8420"),
        heartbeat_interval_ticks=int(raw.get("heartbeat_interval_ticks", 5)),
        miss_threshold=int(raw.get("miss_threshold", 3)),
        broker_lambda=float(raw.get("broker_lambda", 0.1)),
        seed=_apply_seed_env(int(raw.get("seed", 0))),
        persistence_dir=resolve("persistence_dir"),
        topology_path=resolve("topology"),
        catalogue_path=resolve("catalogue"),
        default_owner=raw.get("default_owner", "customer"),
    )
    cfg.check()
    return cfg
