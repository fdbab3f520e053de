"""Simulated grid sites: compute element, software area, queues, faults.

Each site owns a real directory tree (so permission and packaging checks
exercise actual filesystem behavior), a seeded RNG, and two queues. The
normal queue serializes its backlog; the privileged express queue carries no
backlog delay. Behavior is fully determined by (config, seed, fault set),
which keeps campaigns reproducible.

Write refusal under PERM_DENIED is modeled by the site adapter rather than
chmod, for portability.
"""

from __future__ import annotations

import json
import logging
import random
import shutil
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .canonical import canonical_json
from .clock import Clock
from .errors import (
    ConfigInvalid,
    DiskFull,
    DuplicateSite,
    PermissionDenied,
    Unreachable,
    UnknownSite,
)
from .repo import Bundle

logger = logging.getLogger(__name__)


class TaskKind(str, Enum):
    INSTALL_STEP = "install_step"
    VALIDATION_JOB = "validation_job"
    PROBE_CHECK = "probe_check"


BASE_LATENCY_MS = {
    TaskKind.INSTALL_STEP: 100,
    TaskKind.VALIDATION_JOB: 200,
    TaskKind.PROBE_CHECK: 20,
}


class FaultKind(str, Enum):
    UNREACHABLE = "UNREACHABLE"
    PERM_DENIED = "PERM_DENIED"
    DISK_FULL = "DISK_FULL"
    PKGDB_CORRUPT = "PKGDB_CORRUPT"
    JOB_FAIL_PROB = "JOB_FAIL_PROB"
    SLOW = "SLOW"


@dataclass(frozen=True)
class Fault:
    kind: FaultKind
    probability: float | None = None
    factor: float | None = None
    # None means the fault hits every task kind
    applies_to: frozenset[TaskKind] | None = None

    def __post_init__(self) -> None:
        if self.kind is FaultKind.JOB_FAIL_PROB:
            if self.probability is None or not 0.0 <= self.probability <= 1.0:
                raise ConfigInvalid("JOB_FAIL_PROB needs probability in [0, 1]")
        if self.kind is FaultKind.SLOW:
            if self.factor is None or self.factor < 1.0:
                raise ConfigInvalid("SLOW needs factor >= 1")

    def hits(self, task: TaskKind) -> bool:
        return self.applies_to is None or task in self.applies_to

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.probability is not None:
            out["probability"] = self.probability
        if self.factor is not None:
            out["factor"] = self.factor
        if self.applies_to is not None:
            out["applies_to"] = sorted(t.value for t in self.applies_to)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Fault":
        applies = data.get("applies_to")
        return cls(
            kind=FaultKind(data["kind"]),
            probability=data.get("probability"),
            factor=data.get("factor"),
            applies_to=frozenset(TaskKind(t) for t in applies) if applies else None,
        )


@dataclass
class TaskResult:
    ok: bool
    kind: TaskKind
    queue: str
    started_ms: int
    completed_ms: int
    detail: str = ""


@dataclass(frozen=True)
class SiteConfig:
    site_id: str
    architecture: str
    rng_seed: int = 0
    faults: tuple[Fault, ...] = ()

    @classmethod
    def from_dict(cls, data: dict) -> "SiteConfig":
        return cls(
            site_id=data["id"],
            architecture=data["architecture"],
            rng_seed=int(data.get("rng_seed", 0)),
            faults=tuple(Fault.from_dict(f) for f in data.get("faults", ())),
        )


@dataclass
class _QueueState:
    busy_until_ms: int = 0


class SimSite:
    """One simulated site: isolated directory tree, seeded RNG, fault set."""

    def __init__(self, config: SiteConfig, root: Path) -> None:
        self.site_id = config.site_id
        self.architecture = config.architecture
        self.root = root
        self.sw_area = root / "sw"
        self.sw_area.mkdir(parents=True, exist_ok=True)
        self.pkgdb_path = root / "pkgdb.json"
        if not self.pkgdb_path.exists():
            self.pkgdb_path.write_text("{}", "utf-8")
        self.rng = random.Random(config.rng_seed)
        self.faults: dict[FaultKind, Fault] = {f.kind: f for f in config.faults}
        self.queues = {"normal": _QueueState(), "privileged": _QueueState()}
        self._lock = threading.RLock()

    # -- fault-aware adapters --

    def fault(self, kind: FaultKind) -> Fault | None:
        with self._lock:
            return self.faults.get(kind)

    def reachable(self) -> bool:
        return self.fault(FaultKind.UNREACHABLE) is None

    def writable(self) -> bool:
        return self.fault(FaultKind.PERM_DENIED) is None

    def pkgdb_ok(self) -> bool:
        if self.fault(FaultKind.PKGDB_CORRUPT) is not None:
            return False
        try:
            json.loads(self.pkgdb_path.read_text("utf-8"))
            return True
        except (OSError, json.JSONDecodeError):
            return False

    def _refuse_writes(self) -> None:
        if not self.writable():
            raise PermissionDenied(
                f"software area not writable: {self.sw_area}", path=str(self.sw_area)
            )
        if self.fault(FaultKind.DISK_FULL) is not None:
            raise DiskFull(f"no space left in software area: {self.sw_area}")

    def probe_write_roundtrip(self) -> None:
        """Write/read a scratch file in the software area; raises on refusal."""
        self._refuse_writes()
        scratch = self.sw_area / ".rw_probe"
        scratch.write_text("rw", "utf-8")
        assert scratch.read_text("utf-8") == "rw"
        scratch.unlink()

    # -- software area --

    def install_root(self, project: str, version: str) -> Path:
        return self.sw_area / project / version

    def write_bundle_tree(self, project: str, version: str, bundle: Bundle) -> None:
        self._refuse_writes()
        dest = self.install_root(project, version)
        for entry in bundle.entries:
            target = dest / entry.path
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(entry.content)
            target.chmod(entry.mode & 0o7777)

    def remove_install_tree(self, project: str, version: str) -> None:
        self._refuse_writes()
        dest = self.install_root(project, version)
        if dest.exists():
            shutil.rmtree(dest)
        # drop the project dir when this was its last version
        parent = dest.parent
        if parent != self.sw_area and parent.exists() and not any(parent.iterdir()):
            parent.rmdir()

    # -- local package database --

    def _pkgdb_read(self) -> dict:
        return json.loads(self.pkgdb_path.read_text("utf-8"))

    def _pkgdb_write(self, db: dict) -> None:
        self.pkgdb_path.write_text(canonical_json(db), "utf-8")

    def pkgdb_add(self, project: str, version: str, packages: dict[str, str], at: int) -> None:
        self._refuse_writes()
        with self._lock:
            db = self._pkgdb_read()
            key = f"{project}/{version}"
            existing = db.get(key)
            if existing is not None and existing.get("packages") == packages:
                return  # re-install of identical content keeps the original record
            db[key] = {"packages": packages, "installed_at": at}
            self._pkgdb_write(db)

    def pkgdb_remove(self, project: str, version: str) -> None:
        self._refuse_writes()
        with self._lock:
            db = self._pkgdb_read()
            db.pop(f"{project}/{version}", None)
            self._pkgdb_write(db)

    def pkgdb_entries(self) -> dict:
        with self._lock:
            return self._pkgdb_read()


class Fleet:
    """Registry and execution substrate for simulated sites."""

    def __init__(self, sandbox_root: Path | str, clock: Clock) -> None:
        self.sandbox_root = Path(sandbox_root)
        self.sandbox_root.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self._sites: dict[str, SimSite] = {}
        self._lock = threading.RLock()

    def create_site(self, config: SiteConfig) -> SimSite:
        if not config.site_id or not config.architecture:
            raise ConfigInvalid("site id and architecture label are required")
        with self._lock:
            if config.site_id in self._sites:
                raise DuplicateSite(f"site {config.site_id!r} already registered")
            site = SimSite(config, self.sandbox_root / config.site_id)
            self._sites[config.site_id] = site
        logger.info("registered site %s (%s)", config.site_id, config.architecture)
        return site

    def get(self, site_id: str) -> SimSite:
        with self._lock:
            site = self._sites.get(site_id)
        if site is None:
            raise UnknownSite(f"site {site_id!r} is not registered")
        return site

    def site_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._sites)

    def inject(self, site_id: str, fault: Fault) -> dict[FaultKind, Fault]:
        site = self.get(site_id)
        with site._lock:
            site.faults[fault.kind] = fault
            return dict(site.faults)

    def clear(self, site_id: str, kind: FaultKind) -> dict[FaultKind, Fault]:
        site = self.get(site_id)
        with site._lock:
            site.faults.pop(kind, None)
            return dict(site.faults)

    def exec(
        self,
        site_id: str,
        kind: TaskKind,
        queue: str = "normal",
        *,
        wait: bool = True,
    ) -> TaskResult:
        """Run one simulated task on a site queue.

        With ``wait`` the clock is driven to the task's completion time;
        without it the task is only scheduled (a backlog entry), which is how
        load is pre-queued for priority experiments.
        """
        site = self.get(site_id)
        if queue not in site.queues:
            raise ConfigInvalid(f"unknown queue {queue!r}")
        if not site.reachable():
            raise Unreachable(f"site {site_id} unreachable")

        slow = site.fault(FaultKind.SLOW)
        latency = BASE_LATENCY_MS[kind]
        if slow is not None and slow.hits(kind):
            latency = int(latency * (slow.factor or 1.0))

        with site._lock:
            now = self.clock.now_ms()
            if queue == "privileged":
                started = now  # express queue: no backlog delay
            else:
                started = max(now, site.queues[queue].busy_until_ms)
            completed = started + latency
            site.queues[queue].busy_until_ms = max(
                site.queues[queue].busy_until_ms, completed
            )

            if kind is TaskKind.INSTALL_STEP:
                site._refuse_writes()

            ok = True
            detail = ""
            flaky = site.fault(FaultKind.JOB_FAIL_PROB)
            if flaky is not None and flaky.hits(kind):
                if site.rng.random() < (flaky.probability or 0.0):
                    ok = False
                    detail = "injected task failure"

        if wait:
            self.clock.wait_until(completed)
        return TaskResult(
            ok=ok,
            kind=kind,
            queue=queue,
            started_ms=started,
            completed_ms=completed,
            detail=detail,
        )


def load_fleet(path: Path | str, sandbox_root: Path | str, clock: Clock) -> Fleet:
    """Build a fleet from a JSON config file: ``{"sites": [{...}, ...]}``."""
    path = Path(path)
    try:
        data = json.loads(path.read_text("utf-8"))
    except OSError as exc:
        raise ConfigInvalid(f"cannot read fleet file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"fleet file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or "sites" not in data:
        raise ConfigInvalid(f"fleet file {path} must carry a 'sites' list")
    fleet = Fleet(sandbox_root, clock)
    for raw in data["sites"]:
        try:
            fleet.create_site(SiteConfig.from_dict(raw))
        except (KeyError, ValueError) as exc:
            raise ConfigInvalid(f"bad site entry in {path}: {exc}") from exc
    return fleet
