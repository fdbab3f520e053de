"""Shared deployment-lifecycle vocabulary.

The job state graph lives here so both the deployment engine (which walks
it) and the ledger (which folds it out of the event log) agree on legality
and terminality without importing each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class JobAction(str, Enum):
    INSTALL = "install"
    REMOVE = "remove"


class JobState(str, Enum):
    SUBMITTED = "SUBMITTED"
    AUTHORIZED = "AUTHORIZED"
    INSTALLING = "INSTALLING"
    INSTALLED = "INSTALLED"
    VALIDATING = "VALIDATING"
    VALIDATED = "VALIDATED"
    PUBLISHED = "PUBLISHED"
    REJECTED = "REJECTED"
    INSTALL_FAILED = "INSTALL_FAILED"
    VALIDATION_FAILED = "VALIDATION_FAILED"
    ABANDONED = "ABANDONED"


LEGAL_EDGES: dict[JobState, frozenset[JobState]] = {
    JobState.SUBMITTED: frozenset({JobState.AUTHORIZED, JobState.REJECTED}),
    JobState.AUTHORIZED: frozenset({JobState.INSTALLING}),
    JobState.INSTALLING: frozenset({JobState.INSTALLED, JobState.INSTALL_FAILED}),
    JobState.INSTALLED: frozenset({JobState.VALIDATING}),
    JobState.VALIDATING: frozenset({JobState.VALIDATED, JobState.VALIDATION_FAILED}),
    JobState.VALIDATED: frozenset({JobState.PUBLISHED}),
    JobState.INSTALL_FAILED: frozenset({JobState.INSTALLING, JobState.ABANDONED}),
    JobState.VALIDATION_FAILED: frozenset({JobState.INSTALLING, JobState.ABANDONED}),
    JobState.PUBLISHED: frozenset(),
    JobState.REJECTED: frozenset(),
    JobState.ABANDONED: frozenset(),
}

TERMINAL_JOB_STATES = frozenset(
    {JobState.PUBLISHED, JobState.REJECTED, JobState.ABANDONED}
)

# Installation-record value used once a remove job completes; records mirror
# JobState values otherwise.
RECORD_REMOVED = "REMOVED"


def is_legal_edge(from_state: JobState, to_state: JobState) -> bool:
    return to_state in LEGAL_EDGES[from_state]


def is_legal_path(states: list[JobState]) -> bool:
    if not states or states[0] is not JobState.SUBMITTED:
        return False
    return all(is_legal_edge(a, b) for a, b in zip(states, states[1:]))


@dataclass(frozen=True)
class ValidationReport:
    jobs_run: int
    jobs_passed: int
    per_job: tuple[tuple[str, str, int], ...]  # (workload id, verdict, duration ms)

    def __post_init__(self) -> None:
        if self.jobs_run < 1:
            raise ValueError("a validation run needs at least one workload")
        if self.jobs_passed > self.jobs_run:
            raise ValueError("jobs_passed cannot exceed jobs_run")

    @property
    def verdict(self) -> bool:
        return self.jobs_passed == self.jobs_run

    def to_dict(self) -> dict:
        return {
            "jobs_run": self.jobs_run,
            "jobs_passed": self.jobs_passed,
            "per_job": [list(row) for row in self.per_job],
            "verdict": "pass" if self.verdict else "fail",
        }
