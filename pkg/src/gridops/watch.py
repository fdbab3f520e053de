"""Continuous monitoring: probes, history, tickets, and install triggering.

Each probe runs five checks against a site (reachability, software-area
read/write, architecture match, package-database availability, tag/ledger
consistency) as harness tasks under the caller's queue priority, and appends
the result to the site's gap-free history. A cycle probes the whole fleet,
opens a ticket when a check newly fails and closes it when it recovers,
scans request tags to auto-submit installations, and drives in-flight jobs
forward.

History is persisted per site as line-delimited canonical records under
``<state>/history/<site>.log``.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .authz import AuthzService, Credential
from .canonical import canonical_json
from .clock import Clock
from .deploy import DeployService
from .errors import CycleInProgress, DiskFull, NotFound, PermissionDenied, Unreachable
from .harness import Fleet, TaskKind
from .ledger import Ledger, Severity
from .lifecycle import JobAction
from .repo import Repository
from .tags import TagKind, TagStore, render_install_tag

logger = logging.getLogger(__name__)


class CheckId(str, Enum):
    REACHABLE = "REACHABLE"
    SW_AREA_RW = "SW_AREA_RW"
    ARCH_MATCH = "ARCH_MATCH"
    PKG_DB_OK = "PKG_DB_OK"
    TAGS_CONSISTENT = "TAGS_CONSISTENT"


@dataclass(frozen=True)
class CheckOutcome:
    passed: bool
    evidence: str


@dataclass(frozen=True)
class ProbeResult:
    site: str
    at: int
    checks: dict[CheckId, CheckOutcome]
    overall: bool

    def to_dict(self) -> dict:
        return {
            "site": self.site,
            "at": self.at,
            "checks": {
                check.value: [outcome.passed, outcome.evidence]
                for check, outcome in self.checks.items()
            },
            "overall": self.overall,
        }


@dataclass(frozen=True)
class HistoryEntry:
    probe: ProbeResult
    sequence: int

    def to_dict(self) -> dict:
        return {"sequence": self.sequence, **self.probe.to_dict()}


@dataclass
class CycleReport:
    probed: int = 0
    tickets_opened: int = 0
    tickets_closed: int = 0
    submitted: list[str] = field(default_factory=list)
    driven: list[str] = field(default_factory=list)
    skipped_offline: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "probed": self.probed,
            "tickets_opened": self.tickets_opened,
            "tickets_closed": self.tickets_closed,
            "submitted": self.submitted,
            "driven": self.driven,
            "skipped_offline": self.skipped_offline,
        }


class WatchService:
    def __init__(
        self,
        *,
        fleet: Fleet,
        repository: Repository,
        tag_store: TagStore,
        ledger: Ledger,
        deploy: DeployService,
        authz: AuthzService,
        clock: Clock,
        history_dir: Path | str,
        service_credential: Credential,
        vo: str = "cms",
    ) -> None:
        self.fleet = fleet
        self.repository = repository
        self.tag_store = tag_store
        self.ledger = ledger
        self.deploy = deploy
        self.authz = authz
        self.clock = clock
        self.vo = vo
        self.service_credential = service_credential
        self.history_dir = Path(history_dir)
        self.history_dir.mkdir(parents=True, exist_ok=True)
        self._cycle_lock = threading.Lock()
        self._history: dict[str, list[HistoryEntry]] = {}
        self._load_history()

    # -- history -------------------------------------------------------------

    def _load_history(self) -> None:
        for path in sorted(self.history_dir.glob("*.log")):
            site = path.stem
            entries: list[HistoryEntry] = []
            with path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    data = json.loads(line)
                    checks = {
                        CheckId(name): CheckOutcome(passed=row[0], evidence=row[1])
                        for name, row in data["checks"].items()
                    }
                    probe = ProbeResult(
                        site=data["site"],
                        at=data["at"],
                        checks=checks,
                        overall=data["overall"],
                    )
                    entries.append(HistoryEntry(probe=probe, sequence=data["sequence"]))
            self._history[site] = entries

    def _append_history(self, probe: ProbeResult) -> HistoryEntry:
        entries = self._history.setdefault(probe.site, [])
        entry = HistoryEntry(probe=probe, sequence=len(entries) + 1)
        entries.append(entry)
        path = self.history_dir / f"{probe.site}.log"
        with path.open("a", encoding="utf-8") as fh:
            fh.write(canonical_json(entry.to_dict()) + "\n")
        return entry

    def history(self, site: str, last: int) -> list[HistoryEntry]:
        entries = self._history.get(site, [])
        if last <= 0:
            return []
        return list(reversed(entries[-last:]))

    # -- probes ----------------------------------------------------------------

    def probe(self, site_id: str, cred: Credential | None = None) -> ProbeResult:
        """Run all five checks and append the outcome to the site's history."""
        cred = cred or self.service_credential
        queue = self.authz.queue_for(cred).value
        site = self.fleet.get(site_id)
        checks: dict[CheckId, CheckOutcome] = {}

        def run_task() -> tuple[bool, str]:
            result = self.fleet.exec(site_id, TaskKind.PROBE_CHECK, queue=queue)
            return result.ok, result.detail or "ok"

        try:
            ok, detail = run_task()
            checks[CheckId.REACHABLE] = CheckOutcome(ok, detail if not ok else "ok")
        except Unreachable:
            outcome = CheckOutcome(False, "unreachable")
            checks = {check: outcome for check in CheckId}
        else:
            checks[CheckId.SW_AREA_RW] = self._guarded(run_task, self._check_sw_area, site)
            checks[CheckId.ARCH_MATCH] = self._guarded(run_task, self._check_arch, site)
            checks[CheckId.PKG_DB_OK] = self._guarded(run_task, self._check_pkgdb, site)
            checks[CheckId.TAGS_CONSISTENT] = self._guarded(run_task, self._check_tags, site)

        overall = all(outcome.passed for outcome in checks.values())
        probe = ProbeResult(
            site=site_id, at=self.clock.now_ms(), checks=checks, overall=overall
        )
        entry = self._append_history(probe)
        self.ledger.record(
            "probe.recorded", {**probe.to_dict(), "sequence": entry.sequence}
        )
        return probe

    def _guarded(self, run_task, evaluator, site) -> CheckOutcome:
        try:
            ok, detail = run_task()
        except Unreachable:
            return CheckOutcome(False, "unreachable")
        if not ok:
            return CheckOutcome(False, detail)
        return evaluator(site)

    def _check_sw_area(self, site) -> CheckOutcome:
        try:
            site.probe_write_roundtrip()
        except (PermissionDenied, DiskFull, OSError) as exc:
            return CheckOutcome(False, str(exc))
        return CheckOutcome(True, "read/write ok")

    def _check_arch(self, site) -> CheckOutcome:
        published = self.ledger.published_releases(site.site_id)
        for release_key in published:
            project, version = release_key.split("/", 1)
            try:
                manifest = self.repository.manifest(project, version)
            except NotFound:
                return CheckOutcome(False, f"release {release_key} unknown to repository")
            if site.architecture not in manifest.architectures:
                return CheckOutcome(
                    False,
                    f"release {release_key} does not list architecture {site.architecture}",
                )
        return CheckOutcome(True, f"architecture {site.architecture} ok")

    def _check_pkgdb(self, site) -> CheckOutcome:
        if site.pkgdb_ok():
            return CheckOutcome(True, "package db ok")
        return CheckOutcome(False, "package db unavailable or corrupt")

    def _check_tags(self, site) -> CheckOutcome:
        """Bidirectional audit of site tags against the bookkeeping."""
        published = self.ledger.published_releases(site.site_id)
        expected = {}
        for release_key in published:
            project, version = release_key.split("/", 1)
            expected[render_install_tag(self.vo, project, version).raw] = (project, version)
        actual = {
            tag.raw
            for tag in self.tag_store.site_tags(site.site_id)
            if tag.kind is TagKind.INSTALLED
        }
        missing = sorted(set(expected) - actual)
        orphan = sorted(actual - set(expected))
        if missing:
            return CheckOutcome(False, f"tag missing for published release: {missing[0]}")
        if orphan:
            return CheckOutcome(False, f"tag without published record: {orphan[0]}")
        for raw, (project, version) in sorted(expected.items()):
            if not site.install_root(project, version).exists():
                return CheckOutcome(
                    False, f"install tree missing for {project}/{version}"
                )
        return CheckOutcome(True, "tags agree with bookkeeping")

    # -- cycles -------------------------------------------------------------------

    def cycle(self) -> CycleReport:
        """One monitoring pass over the fleet; only one may run at a time."""
        if not self._cycle_lock.acquire(blocking=False):
            raise CycleInProgress("a monitoring cycle is already running")
        try:
            report = CycleReport()
            for site_id in self.fleet.site_ids():
                result = self.probe(site_id)
                report.probed += 1
                for check, outcome in result.checks.items():
                    origin = f"{site_id}:{check.value}"
                    open_ticket = self.ledger.open_ticket_for(origin)
                    if not outcome.passed and open_ticket is None:
                        self.ledger.open_ticket(
                            origin, Severity.WARNING, note=outcome.evidence
                        )
                        report.tickets_opened += 1
                    elif outcome.passed and open_ticket is not None:
                        self.ledger.close_ticket(open_ticket, note="check recovered")
                        report.tickets_closed += 1
            for site_id in self.fleet.site_ids():
                if self.ledger.is_offline(site_id):
                    report.skipped_offline.append(site_id)
                    continue
                for tag in self.tag_store.site_tags(site_id):
                    if tag.kind is not TagKind.REQUEST:
                        continue
                    release = self.repository.match_payload(tag.payload)
                    if release is None:
                        continue
                    if self.ledger.exists(site_id, release):
                        continue
                    job_id = self.deploy.submit(
                        self.service_credential, site_id, release, JobAction.INSTALL
                    )
                    report.submitted.append(job_id)
            for job in self.deploy.active_jobs():
                self.deploy.run(job.job_id)
                report.driven.append(job.job_id)
            return report
        finally:
            self._cycle_lock.release()

    # -- status document -------------------------------------------------------------

    def render_status(self) -> dict:
        """Machine-readable fleet status for the service gate and console."""
        matrix = self.ledger.status_matrix()
        sites = []
        for site_id in self.fleet.site_ids():
            site = self.fleet.get(site_id)
            health = self.ledger.site_health(site_id)
            latest = self.history(site_id, 1)
            probe_doc = latest[0].to_dict() if latest else None
            degraded = bool(probe_doc) and not probe_doc["overall"]
            sites.append(
                {
                    "site": site_id,
                    "architecture": site.architecture,
                    "offline": self.ledger.is_offline(site_id),
                    "degraded": degraded,
                    "latest_probe": probe_doc,
                    "tags": [tag.raw for tag in self.tag_store.site_tags(site_id)],
                    "installations": matrix.get(site_id, {}),
                }
            )
        return {
            "seq": self.ledger.sequence,
            "generated_at": self.clock.now_ms(),
            "sites": sites,
        }
