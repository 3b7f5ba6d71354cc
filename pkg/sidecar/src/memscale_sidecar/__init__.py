"""HTTP sidecar serving retrieval backends over the adapter wire protocol."""

from .app import SCHEMA_VERSION, build_app, serve
from .backends import REGISTRY, BackendInitError, make_backend
from .config import BindError, ConfigError, SidecarConfig, load_config

__all__ = [
    "SCHEMA_VERSION",
    "REGISTRY",
    "BackendInitError",
    "BindError",
    "ConfigError",
    "SidecarConfig",
    "build_app",
    "load_config",
    "make_backend",
    "serve",
]
