"""Operational shell: configuration, HTTP API, CLI, persistence."""

from .config import GatewayConfig, load_config
from .service import GatewayService

__all__ = ["GatewayConfig", "GatewayService", "load_config"]
