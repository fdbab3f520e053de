"""Role-based authorization with keyed-signature tokens.

Credentials are (subject, vo, role, expiry) claims signed with a configured
secret — a stand-in for grid certificates that keeps the role semantics
without a PKI. Three roles exist: ``esm`` (the experiment software manager,
allowed everything), ``dteam`` (monitoring crews, read-only probes), and
``user`` (denied all managed actions). esm and dteam work runs in the
privileged express queue; plain users queue normally.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import hmac
import json
from dataclasses import dataclass
from enum import Enum

from .canonical import canonical_bytes
from .clock import Clock
from .errors import BadSignature, ExpiredToken, MalformedToken, UnknownVO

CLOCK_SKEW_MS = 60_000


class Role(str, Enum):
    ESM = "esm"
    DTEAM = "dteam"
    USER = "user"


class Action(str, Enum):
    SUBMIT_INSTALL = "submit_install"
    WRITE_SW_AREA = "write_sw_area"
    PROBE_READ = "probe_read"
    MANAGE_TICKETS = "manage_tickets"
    PUBLISH_TAG = "publish_tag"


class QueueLabel(str, Enum):
    NORMAL = "normal"
    PRIVILEGED = "privileged"


@dataclass(frozen=True)
class Credential:
    subject: str
    vo: str
    role: Role
    expires_at: int


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: str
    queue: QueueLabel | None = None

    def __post_init__(self) -> None:
        assert (self.queue is not None) == self.allowed, "queue present iff allowed"


@dataclass(frozen=True)
class TrustConfig:
    key: bytes
    known_vos: frozenset[str] = frozenset({"cms"})
    dteam_write: bool = False  # alternative policy, deliberately off by default

    def __post_init__(self) -> None:
        if not self.key:
            raise ValueError("trust key must be non-empty")


_ESM_ACTIONS = frozenset(Action)
_DTEAM_ACTIONS = frozenset({Action.PROBE_READ})
_USER_ACTIONS: frozenset[Action] = frozenset()

_QUEUE_FOR_ROLE = {
    Role.ESM: QueueLabel.PRIVILEGED,
    Role.DTEAM: QueueLabel.PRIVILEGED,
    Role.USER: QueueLabel.NORMAL,
}


def _sign(key: bytes, claims_bytes: bytes) -> bytes:
    return hmac.new(key, claims_bytes, hashlib.sha256).digest()


def _b64encode(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).decode("ascii")


def _b64decode_strict(text: str) -> bytes:
    """Decode base64 and reject any non-canonical encoding.

    Plain b64decode ignores slack bits in the final character, so two
    different strings can decode to the same bytes; re-encoding and comparing
    closes that hole and makes every single-byte token mutation detectable.
    """
    try:
        raw = base64.urlsafe_b64decode(text.encode("ascii"))
    except (binascii.Error, ValueError, UnicodeEncodeError) as exc:
        raise MalformedToken(f"invalid base64: {exc}") from exc
    if _b64encode(raw) != text:
        raise MalformedToken("non-canonical base64 encoding")
    return raw


def mint_token(
    key: bytes, subject: str, vo: str, role: Role | str, expires_at: int
) -> str:
    """Sign claims into the wire format ``b64(claims).b64(signature)``."""
    claims = {
        "subject": subject,
        "vo": vo,
        "role": Role(role).value,
        "expires_at": int(expires_at),
    }
    claims_bytes = canonical_bytes(claims)
    return _b64encode(claims_bytes) + "." + _b64encode(_sign(key, claims_bytes))


class AuthzService:
    """Stateless token verification and the role/action allow table."""

    def __init__(self, trust: TrustConfig, clock: Clock) -> None:
        self.trust = trust
        self.clock = clock

    def authenticate(self, token: str | bytes) -> Credential:
        if isinstance(token, bytes):
            try:
                token = token.decode("ascii")
            except UnicodeDecodeError as exc:
                raise MalformedToken("token is not ascii") from exc
        if not token or "." not in token:
            raise MalformedToken("token must be b64(claims).b64(signature)")
        claims_b64, _, sig_b64 = token.partition(".")
        claims_bytes = _b64decode_strict(claims_b64)
        signature = _b64decode_strict(sig_b64)
        if not hmac.compare_digest(signature, _sign(self.trust.key, claims_bytes)):
            raise BadSignature("token signature does not verify")
        try:
            claims = json.loads(claims_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedToken(f"claims are not valid JSON: {exc}") from exc
        if not isinstance(claims, dict):
            raise MalformedToken("claims must be an object")
        try:
            subject = claims["subject"]
            vo = claims["vo"]
            role = Role(claims["role"])
            expires_at = int(claims["expires_at"])
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedToken(f"claims missing or malformed: {exc}") from exc
        if not subject:
            raise MalformedToken("empty subject")
        if vo not in self.trust.known_vos:
            raise UnknownVO(f"vo {vo!r} is not configured")
        if self.clock.now_ms() > expires_at + CLOCK_SKEW_MS:
            raise ExpiredToken(f"token for {subject!r} expired")
        return Credential(subject=subject, vo=vo, role=role, expires_at=expires_at)

    def allowed_actions(self, role: Role) -> frozenset[Action]:
        if role is Role.ESM:
            return _ESM_ACTIONS
        if role is Role.DTEAM:
            if self.trust.dteam_write:
                return _DTEAM_ACTIONS | {Action.WRITE_SW_AREA}
            return _DTEAM_ACTIONS
        return _USER_ACTIONS

    def authorize(self, cred: Credential, action: Action, resource: str) -> Decision:
        if action in self.allowed_actions(cred.role):
            return Decision(
                allowed=True,
                reason=f"role {cred.role.value} may {action.value} on {resource}",
                queue=self.queue_for(cred),
            )
        return Decision(
            allowed=False,
            reason=f"role {cred.role.value} denied {action.value} on {resource}",
        )

    def queue_for(self, cred: Credential) -> QueueLabel:
        return _QUEUE_FOR_ROLE[cred.role]
