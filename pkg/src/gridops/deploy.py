"""The four-step distribution engine: submission, installation, validation,
publication.

Each (site, release, action) moves through one :class:`DeploymentJob` whose
every transition is appended to the ledger — the ledger's job view IS the
job record, so a restart rebuilds in-flight jobs from the log. Failed
install or validation steps retry with exponential backoff up to the
configured budget; exhausting it abandons the job and escalates its ticket.

Removal reuses the same machine: the install step removes the tree, the
validation step audits that files and package-database entry are gone, and
the publication step retracts the install tag.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass

from .authz import Action, AuthzService, Credential
from .clock import Clock
from .errors import (
    ConfigInvalid,
    DigestMismatch,
    DiskFull,
    DuplicateSubmission,
    FetchFailed,
    IllegalTransition,
    NotFound,
    NotInstalled,
    OrchestratorError,
    PermissionDenied,
    SiteUnreachable,
    StorageFailure,
    TagPublishFailed,
    TaskFailed,
    UnknownJob,
    UnknownRelease,
    Unreachable,
)
from .harness import Fleet, TaskKind
from .ledger import JobView, Ledger, Severity, TicketState
from .lifecycle import (
    LEGAL_EDGES,
    JobAction,
    JobState,
    ValidationReport,
)
from .repo import Repository, fetch as fetch_release
from .tags import TagService, render_install_tag, render_request_tag

logger = logging.getLogger(__name__)

# Re-exported so callers deal with one module for the state machine.
DeploymentJob = JobView


@dataclass(frozen=True)
class DeployConfig:
    max_retries: int = 3
    validation_jobs: int = 3
    backoff_base_ms: int = 2000
    vo: str = "cms"

    def __post_init__(self) -> None:
        if self.validation_jobs < 1:
            raise ConfigInvalid("validation_jobs must be at least 1")
        if self.max_retries < 0:
            raise ConfigInvalid("max_retries must be non-negative")


_INSTALL_STEP_FAILURES = (
    Unreachable,
    PermissionDenied,
    DiskFull,
    FetchFailed,
    DigestMismatch,
    TaskFailed,
    StorageFailure,
)


class DeployService:
    """Drives deployment jobs; all bookkeeping goes through the ledger."""

    def __init__(
        self,
        *,
        repository: Repository,
        fleet: Fleet,
        tags: TagService,
        authz: AuthzService,
        ledger: Ledger,
        clock: Clock,
        service_credential: Credential,
        config: DeployConfig | None = None,
        mirror: Repository | None = None,
    ) -> None:
        self.repository = repository
        self.mirror = mirror
        self.fleet = fleet
        self.tags = tags
        self.authz = authz
        self.ledger = ledger
        self.clock = clock
        self.config = config or DeployConfig()
        self.service_credential = service_credential
        self._submit_lock = threading.Lock()
        self._job_locks: dict[str, threading.Lock] = {
            job_id: threading.Lock() for job_id in ledger.jobs
        }

    def sources(self) -> list[Repository]:
        # mirror-preferred fetch order
        return [r for r in (self.mirror, self.repository) if r is not None]

    # -- submission -------------------------------------------------------------

    def submit(
        self,
        cred: Credential,
        site_id: str,
        release: tuple[str, str],
        action: JobAction = JobAction.INSTALL,
    ) -> str:
        """Create a job and immediately authorize or reject it."""
        project, version = release
        release_key = f"{project}/{version}"
        with self._submit_lock:
            self.fleet.get(site_id)
            if not self.repository.has_release(project, version):
                raise UnknownRelease(f"release {release_key} is not in the repository")
            if action is JobAction.INSTALL:
                if self.ledger.exists(site_id, release):
                    raise DuplicateSubmission(
                        f"install of {release_key} on {site_id} is active or published"
                    )
            else:
                if self.ledger.active_remove_exists(site_id, release_key):
                    raise DuplicateSubmission(
                        f"removal of {release_key} on {site_id} is already active"
                    )
                if self.ledger.published_record(site_id, release_key) is None:
                    raise NotInstalled(f"{release_key} is not published on {site_id}")
            job_id = self.ledger.allocate_job_id()
            self.ledger.record(
                "job.submitted",
                {
                    "job_id": job_id,
                    "site": site_id,
                    "project": project,
                    "version": version,
                    "action": action.value,
                    "submitter": cred.subject,
                    "queue": self.authz.queue_for(cred).value,
                },
            )
            self._job_locks[job_id] = threading.Lock()
        decision = self.authz.authorize(cred, Action.SUBMIT_INSTALL, site_id)
        if decision.allowed:
            self._transition(job_id, JobState.AUTHORIZED, detail=decision.reason)
        else:
            self._transition(job_id, JobState.REJECTED, detail=f"unauthorized: {decision.reason}")
        return job_id

    # -- lookups -----------------------------------------------------------------

    def job(self, job_id: str) -> JobView:
        view = self.ledger.job_view(job_id)
        if view is None:
            raise UnknownJob(f"no job {job_id!r}")
        return view

    def active_jobs(self) -> list[JobView]:
        return sorted(
            (j for j in self.ledger.jobs.values() if not j.terminal),
            key=lambda j: j.job_id,
        )

    # -- state machine ------------------------------------------------------------

    def _transition(
        self, job_id: str, to_state: JobState, *, detail: str = "", attempts: int | None = None
    ) -> JobView:
        job = self.job(job_id)
        if to_state not in LEGAL_EDGES[job.state]:
            raise IllegalTransition(
                f"job {job_id}: {job.state.value} -> {to_state.value} is not a legal edge"
            )
        self.ledger.record(
            "job.transition",
            {
                "job_id": job_id,
                "from": job.state.value,
                "to": to_state.value,
                "detail": detail,
                "attempts": job.attempts if attempts is None else attempts,
            },
        )
        return self.job(job_id)

    def advance(self, job_id: str) -> JobState:
        """Perform exactly one state-machine step for a non-terminal job."""
        lock = self._job_locks.setdefault(job_id, threading.Lock())
        with lock:
            job = self.job(job_id)
            if job.terminal:
                raise IllegalTransition(f"job {job_id} is terminal ({job.state.value})")
            handler = {
                JobState.SUBMITTED: self._step_submitted,
                JobState.AUTHORIZED: self._step_authorized,
                JobState.INSTALLING: self._step_installing,
                JobState.INSTALLED: self._step_installed,
                JobState.VALIDATING: self._step_validating,
                JobState.VALIDATED: self._step_validated,
                JobState.INSTALL_FAILED: self._step_failed,
                JobState.VALIDATION_FAILED: self._step_failed,
            }[job.state]
            handler(job)
            return self.job(job_id).state

    def run(self, job_id: str) -> JobState:
        """Advance a job until it parks in a terminal state."""
        for _ in range(32 * (self.config.max_retries + 1)):
            job = self.job(job_id)
            if job.terminal:
                return job.state
            self.advance(job_id)
        raise IllegalTransition(f"job {job_id} did not reach a terminal state")

    # -- per-state steps -------------------------------------------------------------

    def _step_submitted(self, job: JobView) -> None:
        # Only reachable when a crash separated submission from its
        # authorization record; without the caller's credential the safe
        # answer is deny.
        self._transition(job.job_id, JobState.REJECTED, detail="authorization not recorded")

    def _step_authorized(self, job: JobView) -> None:
        self._transition(
            job.job_id,
            JobState.INSTALLING,
            detail=f"attempt {job.attempts + 1}",
            attempts=job.attempts + 1,
        )

    def _step_installing(self, job: JobView) -> None:
        try:
            if job.action is JobAction.INSTALL:
                self._install(job)
            else:
                self._remove_tree(job)
        except _INSTALL_STEP_FAILURES as exc:
            self._transition(job.job_id, JobState.INSTALL_FAILED, detail=str(exc))
            self._note_failure(job.job_id, str(exc))
            return
        self._transition(job.job_id, JobState.INSTALLED, detail="")

    def _step_installed(self, job: JobView) -> None:
        self._transition(job.job_id, JobState.VALIDATING, detail="")

    def _step_validating(self, job: JobView) -> None:
        try:
            if job.action is JobAction.INSTALL:
                report = self._validate(job)
            else:
                report = self._audit_removal(job)
        except SiteUnreachable as exc:
            self._transition(job.job_id, JobState.VALIDATION_FAILED, detail=str(exc))
            self._note_failure(job.job_id, str(exc))
            return
        if report.verdict:
            self._transition(
                job.job_id,
                JobState.VALIDATED,
                detail=f"{report.jobs_passed}/{report.jobs_run} workloads passed",
            )
        else:
            detail = f"{report.jobs_passed}/{report.jobs_run} workloads passed"
            self._transition(job.job_id, JobState.VALIDATION_FAILED, detail=detail)
            self._note_failure(job.job_id, detail)

    def _step_validated(self, job: JobView) -> None:
        if job.action is JobAction.INSTALL:
            self._publish_tags(job)
        else:
            self._retract_tags(job)
        self._transition(job.job_id, JobState.PUBLISHED, detail="")
        ticket_id = self.ledger.open_ticket_for(job.job_id)
        if ticket_id is not None:
            self.ledger.close_ticket(ticket_id, note="job recovered and published")

    def _step_failed(self, job: JobView) -> None:
        if job.attempts <= self.config.max_retries:
            delay = self.config.backoff_base_ms * (2 ** (job.attempts - 1))
            self.clock.sleep_ms(delay)
            self._transition(
                job.job_id,
                JobState.INSTALLING,
                detail=f"retry, attempt {job.attempts + 1} after {delay} ms",
                attempts=job.attempts + 1,
            )
            ticket_id = self.ledger.open_ticket_for(job.job_id)
            if ticket_id is not None:
                ticket = self.ledger.tickets[ticket_id]
                if ticket.state in (TicketState.OPEN, TicketState.RETRYING):
                    self.ledger.note_retry(ticket_id, note=f"retry attempt {job.attempts + 1}")
        else:
            self._transition(
                job.job_id,
                JobState.ABANDONED,
                detail=f"retries exhausted after {job.attempts} attempts",
            )
            if job.action is JobAction.INSTALL:
                self._cleanup_install(job)
            ticket_id = self.ledger.open_ticket_for(job.job_id)
            if ticket_id is not None:
                self.ledger.escalate(
                    ticket_id,
                    severity=Severity.CRITICAL,
                    note=f"job {job.job_id} abandoned after {job.attempts} attempts",
                )

    # -- work steps ----------------------------------------------------------------

    def _install(self, job: JobView) -> None:
        site = self.fleet.get(job.site)
        manifest = self.repository.manifest(job.project, job.version)
        try:
            bundles = fetch_release((job.project, job.version), self.sources())
        except NotFound as exc:
            raise FetchFailed(str(exc)) from exc
        result = self.fleet.exec(job.site, TaskKind.INSTALL_STEP, queue=job.queue)
        if not result.ok:
            raise TaskFailed(f"install task failed on {job.site}: {result.detail}")
        for pkg in manifest.packages:
            site.write_bundle_tree(job.project, job.version, bundles[pkg.digest])
        site.pkgdb_add(
            job.project,
            job.version,
            {pkg.name: pkg.digest for pkg in manifest.packages},
            at=self.clock.now_ms(),
        )

    def _remove_tree(self, job: JobView) -> None:
        site = self.fleet.get(job.site)
        result = self.fleet.exec(job.site, TaskKind.INSTALL_STEP, queue=job.queue)
        if not result.ok:
            raise TaskFailed(f"removal task failed on {job.site}: {result.detail}")
        site.remove_install_tree(job.project, job.version)
        site.pkgdb_remove(job.project, job.version)

    def _validate(self, job: JobView) -> ValidationReport:
        per_job: list[tuple[str, str, int]] = []
        passed = 0
        for i in range(self.config.validation_jobs):
            try:
                result = self.fleet.exec(job.site, TaskKind.VALIDATION_JOB, queue=job.queue)
            except Unreachable as exc:
                raise SiteUnreachable(str(exc)) from exc
            verdict = "pass" if result.ok else "fail"
            passed += result.ok
            per_job.append((f"wl-{i + 1:02d}", verdict, result.completed_ms - result.started_ms))
        report = ValidationReport(
            jobs_run=self.config.validation_jobs, jobs_passed=passed, per_job=tuple(per_job)
        )
        self._record_report(job, report)
        return report

    def _audit_removal(self, job: JobView) -> ValidationReport:
        site = self.fleet.get(job.site)
        tree_gone = not site.install_root(job.project, job.version).exists()
        db_gone = f"{job.project}/{job.version}" not in site.pkgdb_entries()
        ok = tree_gone and db_gone
        report = ValidationReport(
            jobs_run=1,
            jobs_passed=1 if ok else 0,
            per_job=(("remove-audit", "pass" if ok else "fail", 0),),
        )
        self._record_report(job, report)
        return report

    def _record_report(self, job: JobView, report: ValidationReport) -> None:
        self.ledger.record(
            "validation.report",
            {
                "job_id": job.job_id,
                "site": job.site,
                "project": job.project,
                "version": job.version,
                **report.to_dict(),
            },
        )

    def _publish_tags(self, job: JobView) -> None:
        tag = render_install_tag(self.config.vo, job.project, job.version)
        request = render_request_tag(self.config.vo, job.project, job.version)
        try:
            self.tags.publish(self.service_credential, job.site, tag)
            self.tags.retract(self.service_credential, job.site, request)
        except OrchestratorError as exc:
            raise TagPublishFailed(f"tag publication failed on {job.site}: {exc}") from exc

    def _retract_tags(self, job: JobView) -> None:
        tag = render_install_tag(self.config.vo, job.project, job.version)
        try:
            self.tags.retract(self.service_credential, job.site, tag)
        except OrchestratorError as exc:
            raise TagPublishFailed(f"tag retraction failed on {job.site}: {exc}") from exc

    def _cleanup_install(self, job: JobView) -> None:
        # Abandoned installs are wiped so a later submission starts clean;
        # best effort, the site may be the reason the job died.
        try:
            site = self.fleet.get(job.site)
            site.remove_install_tree(job.project, job.version)
            site.pkgdb_remove(job.project, job.version)
        except OrchestratorError as exc:
            logger.warning("cleanup after abandoned %s skipped: %s", job.job_id, exc)

    def _note_failure(self, job_id: str, note: str) -> None:
        if self.ledger.open_ticket_for(job_id) is None:
            self.ledger.open_ticket(origin=job_id, severity=Severity.ERROR, note=note)
