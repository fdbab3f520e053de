"""Error hierarchy shared by all modules.

Every error carries a stable short ``code`` used by the service gate for its
HTTP status mapping, so the mapping stays total: one code, one status.
"""

from __future__ import annotations


class OrchestratorError(Exception):
    """Base class for all gridops errors."""

    code = "internal"

    def __init__(self, message: str = "", **context: object) -> None:
        super().__init__(message or self.code)
        self.context = context


# --- repository / packaging ---------------------------------------------

class BadIdentifier(OrchestratorError):
    code = "bad_identifier"


class EmptyRelease(OrchestratorError):
    code = "empty_release"


class DanglingDependency(OrchestratorError):
    code = "dangling_dependency"


class DuplicatePackage(OrchestratorError):
    code = "duplicate_package"


class PathTraversal(OrchestratorError):
    code = "path_traversal"


class DuplicatePath(OrchestratorError):
    code = "duplicate_path"


class DigestMismatch(OrchestratorError):
    code = "digest_mismatch"


class AlreadyPublished(OrchestratorError):
    code = "already_published"


class StorageFailure(OrchestratorError):
    code = "storage_failure"


class MirrorAhead(OrchestratorError):
    code = "mirror_ahead"


class NotFound(OrchestratorError):
    code = "not_found"


class IllegalStateChange(OrchestratorError):
    code = "illegal_state_change"


# --- authorization --------------------------------------------------------

class AuthError(OrchestratorError):
    code = "auth_error"


class MalformedToken(AuthError):
    code = "malformed_token"


class BadSignature(AuthError):
    code = "bad_signature"


class UnknownVO(AuthError):
    code = "unknown_vo"


class ExpiredToken(AuthError):
    code = "expired_token"


class Unauthorized(OrchestratorError):
    code = "unauthorized"


# --- tags -----------------------------------------------------------------

class NotATag(OrchestratorError):
    code = "not_a_tag"


# --- harness ---------------------------------------------------------------

class DuplicateSite(OrchestratorError):
    code = "duplicate_site"


class UnknownSite(OrchestratorError):
    code = "unknown_site"


class Unreachable(OrchestratorError):
    code = "unreachable"


class PermissionDenied(OrchestratorError):
    code = "permission_denied"


class DiskFull(OrchestratorError):
    code = "disk_full"


class TaskFailed(OrchestratorError):
    code = "task_failed"


# --- deployment -------------------------------------------------------------

class DuplicateSubmission(OrchestratorError):
    code = "duplicate_submission"


class UnknownRelease(OrchestratorError):
    code = "unknown_release"


class UnknownJob(OrchestratorError):
    code = "unknown_job"


class IllegalTransition(OrchestratorError):
    code = "illegal_transition"


class FetchFailed(OrchestratorError):
    code = "fetch_failed"


class NotInstalled(OrchestratorError):
    code = "not_installed"


class SiteUnreachable(OrchestratorError):
    code = "site_unreachable"


class TagPublishFailed(OrchestratorError):
    code = "tag_publish_failed"


# --- ledger ------------------------------------------------------------------

class IllegalTicketTransition(OrchestratorError):
    code = "illegal_ticket_transition"


class UnknownTicket(OrchestratorError):
    code = "unknown_ticket"


# --- watch / gate -------------------------------------------------------------

class CycleInProgress(OrchestratorError):
    code = "cycle_in_progress"


class ConfigInvalid(OrchestratorError):
    code = "config_invalid"


class BadRequest(OrchestratorError):
    code = "bad_request"
