"""Service configuration.

One JSON file configures the whole orchestrator. The trust key always comes
from a file referenced here, never from the command line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigInvalid

_REQUIRED_KEYS = ("state_dir", "repo_root", "trust_key_file")


@dataclass(frozen=True)
class GateConfig:
    state_dir: str
    repo_root: str
    trust_key_file: str
    fleet_file: str | None = None
    mirror_root: str | None = None
    listen_addr: str = "127.0.0.1:8347"
    cycle_period_s: float = 30.0
    max_retries: int = 3
    validation_jobs: int = 3
    backoff_base_ms: int = 2000
    vo: str = "cms"
    known_vos: tuple[str, ...] = ("cms",)
    dteam_write: bool = False
    clock: str = "virtual"
    test_mode: bool = False
    ledger_fsync: bool = True

    def __post_init__(self) -> None:
        if self.validation_jobs < 1:
            raise ConfigInvalid("validation_jobs must be at least 1")
        if self.max_retries < 0:
            raise ConfigInvalid("max_retries must be non-negative")
        if self.clock not in ("virtual", "system"):
            raise ConfigInvalid(f"clock must be 'virtual' or 'system', not {self.clock!r}")
        if self.cycle_period_s < 0:
            raise ConfigInvalid("cycle_period_s must be non-negative")

    @property
    def listen_host(self) -> str:
        host, _, _ = self.listen_addr.partition(":")
        return host or "127.0.0.1"

    @property
    def listen_port(self) -> int:
        _, _, port = self.listen_addr.partition(":")
        try:
            return int(port) if port else 8347
        except ValueError as exc:
            raise ConfigInvalid(f"bad listen_addr port: {self.listen_addr!r}") from exc


def load_config(path: Path | str) -> GateConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text("utf-8"))
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid(f"config {path} must be a JSON object")
    missing = [key for key in _REQUIRED_KEYS if key not in data]
    if missing:
        raise ConfigInvalid(f"config {path} missing keys: {', '.join(missing)}")
    known = {f.name for f in fields(GateConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigInvalid(f"config {path} has unknown keys: {', '.join(unknown)}")
    if "known_vos" in data:
        data["known_vos"] = tuple(data["known_vos"])
    try:
        return GateConfig(**data)
    except TypeError as exc:
        raise ConfigInvalid(f"config {path}: {exc}") from exc
