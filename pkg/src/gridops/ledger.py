"""Bookkeeping database and error-treatment service.

Everything the system does funnels through one append-only event log; the
installation records, status matrix, tickets, and site-health views are pure
folds over it. That makes the whole bookkeeping state reconstructible by
replay, which is also how crash recovery works: opening a ledger on an
existing state directory folds the log back into memory.

Event log and snapshot live under ``<state>/ledger/``; one canonical
serialized entry per line.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .canonical import canonical_json
from .clock import Clock
from .errors import IllegalTicketTransition, StorageFailure, UnknownTicket
from .lifecycle import RECORD_REMOVED, TERMINAL_JOB_STATES, JobAction, JobState

OFFLINE_AFTER_CONSECUTIVE_UNREACHABLE = 3


class TicketState(str, Enum):
    OPEN = "OPEN"
    RETRYING = "RETRYING"
    ESCALATED = "ESCALATED"
    CLOSED = "CLOSED"


class Severity(str, Enum):
    WARNING = "warning"
    ERROR = "error"
    CRITICAL = "critical"


_OPEN_TICKET_STATES = frozenset(
    {TicketState.OPEN, TicketState.RETRYING, TicketState.ESCALATED}
)


@dataclass
class Ticket:
    ticket_id: str
    origin: str
    severity: Severity
    state: TicketState
    retry_count: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ticket_id": self.ticket_id,
            "origin": self.origin,
            "severity": self.severity.value,
            "state": self.state.value,
            "retry_count": self.retry_count,
            "notes": list(self.notes),
        }


@dataclass
class JobView:
    job_id: str
    site: str
    project: str
    version: str
    action: JobAction
    submitter: str
    queue: str
    state: JobState
    attempts: int = 0
    transitions: list[tuple[str, str, int, str]] = field(default_factory=list)

    @property
    def release_key(self) -> str:
        return f"{self.project}/{self.version}"

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_JOB_STATES

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "site": self.site,
            "project": self.project,
            "version": self.version,
            "action": self.action.value,
            "submitter": self.submitter,
            "queue": self.queue,
            "state": self.state.value,
            "attempts": self.attempts,
            "transitions": [list(t) for t in self.transitions],
        }


@dataclass
class InstallationRecord:
    site: str
    release: str
    state: str
    updated_at: int
    validation_seq: int | None = None

    def to_dict(self) -> dict:
        return {
            "site": self.site,
            "release": self.release,
            "state": self.state,
            "updated_at": self.updated_at,
            "validation_seq": self.validation_seq,
        }


@dataclass
class _SiteHealth:
    last_checks: dict[str, list] = field(default_factory=dict)
    last_overall: bool | None = None
    last_at: int = 0
    last_sequence: int = 0
    consecutive_unreachable: int = 0

    @property
    def offline(self) -> bool:
        return self.consecutive_unreachable >= OFFLINE_AFTER_CONSECUTIVE_UNREACHABLE

    def to_dict(self) -> dict:
        return {
            "last_checks": self.last_checks,
            "last_overall": self.last_overall,
            "last_at": self.last_at,
            "last_sequence": self.last_sequence,
            "consecutive_unreachable": self.consecutive_unreachable,
            "offline": self.offline,
        }


class Ledger:
    """Single-writer append-only event log plus its derived views.

    ``state_dir=None`` keeps the ledger purely in memory (used for replay
    verification); otherwise events are durably appended under
    ``<state_dir>/events.log`` before the caller proceeds.
    """

    def __init__(
        self,
        state_dir: Path | str | None,
        *,
        clock: Clock,
        escalation_threshold: int = 3,
        fsync: bool = True,
        snapshot_interval: int = 200,
    ) -> None:
        self.clock = clock
        self.escalation_threshold = escalation_threshold
        self._fsync = fsync
        self._snapshot_interval = snapshot_interval
        self._lock = threading.RLock()
        self._sequence = 0
        self._job_ordinal = 0
        self._ticket_ordinal = 0
        self.jobs: dict[str, JobView] = {}
        self.installations: dict[str, InstallationRecord] = {}
        self.tickets: dict[str, Ticket] = {}
        self.validations: dict[int, dict] = {}
        self._open_by_origin: dict[str, str] = {}
        self._site_health: dict[str, _SiteHealth] = {}
        self._events_path: Path | None = None
        self._handle = None
        if state_dir is not None:
            root = Path(state_dir)
            root.mkdir(parents=True, exist_ok=True)
            self._events_path = root / "events.log"
            self._snapshot_path = root / "snapshot.json"
            if self._events_path.exists():
                for entry in _iter_entries(self._events_path):
                    self._apply(entry)
            self._handle = self._events_path.open("a", encoding="utf-8")

    # -- recording ------------------------------------------------------------

    def record(self, kind: str, body: dict) -> int:
        """Durably append one event and update the derived views."""
        with self._lock:
            entry = {
                "sequence": self._sequence + 1,
                "at": self.clock.now_ms(),
                "kind": kind,
                "body": body,
            }
            if self._handle is not None:
                try:
                    self._handle.write(canonical_json(entry) + "\n")
                    self._handle.flush()
                    if self._fsync:
                        os.fsync(self._handle.fileno())
                except OSError as exc:
                    raise StorageFailure(f"event append failed: {exc}") from exc
            self._apply(entry)
            if (
                self._handle is not None
                and self._snapshot_interval
                and self._sequence % self._snapshot_interval == 0
            ):
                self.write_snapshot()
            return self._sequence

    # -- fold -------------------------------------------------------------------

    def _apply(self, entry: dict) -> None:
        seq = int(entry["sequence"])
        self._sequence = seq
        kind = entry["kind"]
        body = entry["body"]
        at = int(entry["at"])
        if kind == "job.submitted":
            job = JobView(
                job_id=body["job_id"],
                site=body["site"],
                project=body["project"],
                version=body["version"],
                action=JobAction(body["action"]),
                submitter=body["submitter"],
                queue=body["queue"],
                state=JobState.SUBMITTED,
            )
            self.jobs[job.job_id] = job
            self._job_ordinal = max(self._job_ordinal, _ordinal(job.job_id))
            if job.action is JobAction.INSTALL:
                self._set_record(job.site, job.release_key, JobState.SUBMITTED.value, at)
        elif kind == "job.transition":
            job = self.jobs[body["job_id"]]
            to_state = JobState(body["to"])
            job.state = to_state
            job.attempts = int(body["attempts"])
            job.transitions.append((body["from"], body["to"], at, body.get("detail", "")))
            if job.action is JobAction.INSTALL:
                self._set_record(job.site, job.release_key, to_state.value, at)
            elif job.action is JobAction.REMOVE and to_state is JobState.PUBLISHED:
                self._set_record(job.site, job.release_key, RECORD_REMOVED, at)
        elif kind == "validation.report":
            self.validations[seq] = dict(body)
            key = _record_key(body["site"], f"{body['project']}/{body['version']}")
            record = self.installations.get(key)
            if record is not None:
                record.validation_seq = seq
        elif kind == "ticket.opened":
            ticket = Ticket(
                ticket_id=body["ticket_id"],
                origin=body["origin"],
                severity=Severity(body["severity"]),
                state=TicketState.OPEN,
                notes=[body.get("note", "")],
            )
            self.tickets[ticket.ticket_id] = ticket
            self._ticket_ordinal = max(self._ticket_ordinal, _ordinal(ticket.ticket_id))
            self._open_by_origin[ticket.origin] = ticket.ticket_id
        elif kind == "ticket.retry":
            ticket = self.tickets[body["ticket_id"]]
            ticket.state = TicketState.RETRYING
            ticket.retry_count = int(body["retry_count"])
            ticket.notes.append(body.get("note", ""))
        elif kind == "ticket.escalated":
            ticket = self.tickets[body["ticket_id"]]
            ticket.state = TicketState.ESCALATED
            ticket.severity = Severity(body["severity"])
            ticket.notes.append(body.get("note", ""))
        elif kind == "ticket.closed":
            ticket = self.tickets[body["ticket_id"]]
            ticket.state = TicketState.CLOSED
            ticket.notes.append(body.get("note", ""))
            if self._open_by_origin.get(ticket.origin) == ticket.ticket_id:
                del self._open_by_origin[ticket.origin]
        elif kind == "probe.recorded":
            health = self._site_health.setdefault(body["site"], _SiteHealth())
            health.last_checks = dict(body["checks"])
            health.last_overall = bool(body["overall"])
            health.last_at = int(body["at"])
            health.last_sequence = int(body["sequence"])
            reachable = bool(body["checks"]["REACHABLE"][0])
            if reachable:
                health.consecutive_unreachable = 0
            else:
                health.consecutive_unreachable += 1
        # unknown kinds fold to nothing so logs stay forward-compatible

    def _set_record(self, site: str, release: str, state: str, at: int) -> None:
        key = _record_key(site, release)
        record = self.installations.get(key)
        if record is None:
            self.installations[key] = InstallationRecord(
                site=site, release=release, state=state, updated_at=at
            )
        else:
            record.state = state
            record.updated_at = at

    # -- identifiers -------------------------------------------------------------

    def allocate_job_id(self) -> str:
        with self._lock:
            self._job_ordinal += 1
            return f"J{self._job_ordinal:06d}"

    # -- queries -----------------------------------------------------------------

    @property
    def sequence(self) -> int:
        with self._lock:
            return self._sequence

    def exists(self, site: str, release: tuple[str, str], active_or_published: bool = True) -> bool:
        """True iff an install for (site, release) is in flight or on record."""
        project, version = release
        release_key = f"{project}/{version}"
        with self._lock:
            for job in self.jobs.values():
                if (
                    job.site == site
                    and job.release_key == release_key
                    and job.action is JobAction.INSTALL
                    and not job.terminal
                ):
                    return True
            if active_or_published:
                record = self.installations.get(_record_key(site, release_key))
                if record is not None and record.state == JobState.PUBLISHED.value:
                    return True
        return False

    def active_remove_exists(self, site: str, release_key: str) -> bool:
        with self._lock:
            return any(
                job.site == site
                and job.release_key == release_key
                and job.action is JobAction.REMOVE
                and not job.terminal
                for job in self.jobs.values()
            )

    def published_record(self, site: str, release_key: str) -> InstallationRecord | None:
        with self._lock:
            record = self.installations.get(_record_key(site, release_key))
            if record is not None and record.state == JobState.PUBLISHED.value:
                return record
        return None

    def published_releases(self, site: str) -> list[str]:
        with self._lock:
            return sorted(
                record.release
                for record in self.installations.values()
                if record.site == site and record.state == JobState.PUBLISHED.value
            )

    def status_matrix(self) -> dict[str, dict[str, str]]:
        with self._lock:
            matrix: dict[str, dict[str, str]] = {}
            for record in self.installations.values():
                matrix.setdefault(record.site, {})[record.release] = record.state
            return {site: dict(sorted(rels.items())) for site, rels in sorted(matrix.items())}

    def job_view(self, job_id: str) -> JobView | None:
        with self._lock:
            return self.jobs.get(job_id)

    def open_ticket_for(self, origin: str) -> str | None:
        with self._lock:
            return self._open_by_origin.get(origin)

    def last_probe_checks(self, site: str) -> dict[str, list] | None:
        with self._lock:
            health = self._site_health.get(site)
            return dict(health.last_checks) if health else None

    def site_health(self, site: str) -> dict | None:
        with self._lock:
            health = self._site_health.get(site)
            return health.to_dict() if health else None

    def is_offline(self, site: str) -> bool:
        with self._lock:
            health = self._site_health.get(site)
            return bool(health and health.offline)

    # -- tickets -----------------------------------------------------------------

    def open_ticket(self, origin: str, severity: Severity, note: str = "") -> Ticket:
        with self._lock:
            self._ticket_ordinal += 1
            ticket_id = f"T{self._ticket_ordinal:06d}"
            self.record(
                "ticket.opened",
                {
                    "ticket_id": ticket_id,
                    "origin": origin,
                    "severity": severity.value,
                    "note": note,
                },
            )
            return self.tickets[ticket_id]

    def _require_ticket(self, ticket_id: str) -> Ticket:
        ticket = self.tickets.get(ticket_id)
        if ticket is None:
            raise UnknownTicket(f"no ticket {ticket_id!r}")
        return ticket

    def note_retry(self, ticket_id: str, note: str = "") -> Ticket:
        with self._lock:
            ticket = self._require_ticket(ticket_id)
            if ticket.state not in (TicketState.OPEN, TicketState.RETRYING):
                raise IllegalTicketTransition(
                    f"ticket {ticket_id} is {ticket.state.value}, cannot note a retry"
                )
            if ticket.retry_count >= self.escalation_threshold:
                raise IllegalTicketTransition(
                    f"ticket {ticket_id} already at escalation threshold"
                )
            self.record(
                "ticket.retry",
                {"ticket_id": ticket_id, "retry_count": ticket.retry_count + 1, "note": note},
            )
            ticket = self.tickets[ticket_id]
            if ticket.retry_count >= self.escalation_threshold:
                self.record(
                    "ticket.escalated",
                    {
                        "ticket_id": ticket_id,
                        "severity": ticket.severity.value,
                        "note": "retry budget exhausted",
                    },
                )
            return self.tickets[ticket_id]

    def escalate(self, ticket_id: str, severity: Severity | None = None, note: str = "") -> Ticket:
        with self._lock:
            ticket = self._require_ticket(ticket_id)
            if ticket.state is TicketState.CLOSED:
                raise IllegalTicketTransition(f"ticket {ticket_id} is closed")
            new_severity = severity or ticket.severity
            if ticket.state is TicketState.ESCALATED and new_severity == ticket.severity:
                return ticket
            self.record(
                "ticket.escalated",
                {"ticket_id": ticket_id, "severity": new_severity.value, "note": note},
            )
            return self.tickets[ticket_id]

    def close_ticket(self, ticket_id: str, note: str = "") -> Ticket:
        with self._lock:
            ticket = self._require_ticket(ticket_id)
            if ticket.state not in _OPEN_TICKET_STATES:
                raise IllegalTicketTransition(f"ticket {ticket_id} is already closed")
            self.record("ticket.closed", {"ticket_id": ticket_id, "note": note})
            return self.tickets[ticket_id]

    def tickets_sorted(self) -> list[Ticket]:
        with self._lock:
            return [self.tickets[tid] for tid in sorted(self.tickets)]

    # -- snapshots and replay -------------------------------------------------------

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "sequence": self._sequence,
                "jobs": {jid: j.to_dict() for jid, j in sorted(self.jobs.items())},
                "installations": {
                    key: rec.to_dict() for key, rec in sorted(self.installations.items())
                },
                "tickets": {tid: t.to_dict() for tid, t in sorted(self.tickets.items())},
                "site_health": {
                    site: h.to_dict() for site, h in sorted(self._site_health.items())
                },
                "status_matrix": self.status_matrix(),
            }

    def write_snapshot(self) -> None:
        if self._events_path is None:
            return
        tmp = self._snapshot_path.with_suffix(".tmp")
        tmp.write_text(canonical_json(self.snapshot()), "utf-8")
        tmp.replace(self._snapshot_path)

    def events(self) -> Iterator[dict]:
        """Stream the persisted event log from the beginning."""
        if self._events_path is None or not self._events_path.exists():
            return iter(())
        return _iter_entries(self._events_path)

    @classmethod
    def replay(
        cls,
        events: Iterable[dict] | Path | str,
        *,
        clock: Clock,
        escalation_threshold: int = 3,
    ) -> "Ledger":
        """Fold an event stream into a fresh in-memory ledger."""
        ledger = cls(
            None, clock=clock, escalation_threshold=escalation_threshold, fsync=False
        )
        entries = _iter_entries(Path(events)) if isinstance(events, (str, Path)) else events
        expected = 0
        for entry in entries:
            expected += 1
            if int(entry["sequence"]) != expected:
                raise StorageFailure(
                    f"event log gap: expected sequence {expected}, saw {entry['sequence']}"
                )
            ledger._apply(entry)
        return ledger

    def close(self) -> None:
        with self._lock:
            if self._handle is not None:
                self.write_snapshot()
                self._handle.close()
                self._handle = None


def _record_key(site: str, release_key: str) -> str:
    return f"{site}|{release_key}"


def _ordinal(identifier: str) -> int:
    try:
        return int(identifier[1:])
    except ValueError:
        return 0


def _iter_entries(path: Path) -> Iterator[dict]:
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
