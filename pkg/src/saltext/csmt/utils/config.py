"""
Deployment settings.

Resolution order: built-in defaults, environment variables, the ``csmt`` key of the Salt
configuration, explicit overrides.
"""
import logging
import os
from dataclasses import dataclass
from dataclasses import fields
from dataclasses import replace
from typing import Optional

from . import core
from .exceptions import ConfigError

log = logging.getLogger(__name__)

PIPELINE_PORTS = {"acc": 5012, "ks": 5013, "lrt": 5014}

ENVIRONMENT = {
    "scale": "ZKP_SCALER",
    "tree_height": "TREE_HEIGHT",
    "state_dir": "CSMT_STATE_DIR",
    "witness_key": "CSMT_WITNESS_KEY",
    "backend_seed": "CSMT_BACKEND_SEED",
    "security_bits": "CSMT_SECURITY_BITS",
    "salt_length": "CSMT_SALT_LENGTH",
    "host": "CSMT_SERVICE_HOST",
    "port": "CSMT_SERVICE_PORT",
    "workers": "CSMT_WORKERS",
    "api_token": "CSMT_API_TOKEN",
    "log_level": "CSMT_LOG_LEVEL",
}


@dataclass(frozen=True)
class Settings:
    scale: int = 12
    tree_height: int = 16
    state_dir: Optional[str] = None
    witness_key: Optional[str] = None
    backend_seed: Optional[str] = None
    security_bits: int = 128
    salt_length: int = core.SALT_LENGTH
    host: str = "127.0.0.1"
    port: int = PIPELINE_PORTS["ks"]
    workers: int = 4
    api_token: Optional[str] = None
    log_level: str = "warning"

    def __post_init__(self):
        if not 0 <= self.scale <= core.MAX_SCALE:
            raise ConfigError(f"ZKP_SCALER must lie in [0, {core.MAX_SCALE}], got {self.scale}")
        if not 1 <= self.tree_height <= 32:
            raise ConfigError(f"TREE_HEIGHT must lie in [1, 32], got {self.tree_height}")
        if self.security_bits < 8 or self.security_bits % 8:
            raise ConfigError(f"Security bits must be a positive multiple of 8, got {self.security_bits}")
        if self.salt_length < 8:
            raise ConfigError(f"Salts shorter than 8 bytes are refused, got {self.salt_length}")
        if self.workers < 1:
            raise ConfigError("At least one worker is required")
        if not 0 < self.port < 65536:
            raise ConfigError(f"Invalid service port {self.port}")

    @property
    def seed_bytes(self):
        """
        Backend seed as bytes; hex strings are decoded, anything else is used as UTF-8.
        """
        if not self.backend_seed:
            return None
        try:
            return bytes.fromhex(self.backend_seed)
        except ValueError:
            return self.backend_seed.encode()

    @property
    def public_dir(self):
        return os.path.join(self.state_dir, "public") if self.state_dir else None

    def for_pipeline(self, pipeline):
        try:
            return replace(self, port=PIPELINE_PORTS[pipeline])
        except KeyError:
            raise ConfigError(f"Unknown pipeline '{pipeline}'") from None


def _coerce(name, value):
    kind = {item.name: item.type for item in fields(Settings)}[name]
    if value is None:
        return None
    if kind is int or kind == "int":
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"Setting {name} expects an integer, got {value!r}") from None
    return str(value)


def load_settings(overrides=None, salt_config=None, environ=None):
    """
    Resolve a :class:`Settings`.

    overrides
        Mapping of setting name to value, e.g. parsed command line flags. ``None`` values
        are ignored.

    salt_config
        The ``csmt`` dictionary from Salt's ``config.get``.

    environ
        Environment mapping, ``os.environ`` by default.
    """
    environ = os.environ if environ is None else environ
    values = {}
    for name, variable in ENVIRONMENT.items():
        if environ.get(variable) not in (None, ""):
            values[name] = environ[variable]
    for source in (salt_config or {}, overrides or {}):
        for name, value in source.items():
            if name not in ENVIRONMENT:
                raise ConfigError(f"Unknown setting '{name}'")
            if value is not None:
                values[name] = value
    settings = Settings(**{name: _coerce(name, value) for name, value in values.items()})
    log.debug(f"Settings: scale={settings.scale} height={settings.tree_height} state={settings.state_dir}")
    return settings
