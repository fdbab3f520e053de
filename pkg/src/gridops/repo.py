"""Release packaging and the content-addressed repository.

A release enters the system as a manifest (fixed package list with digests)
plus one bundle per package. Bundles use a deterministic byte format —
entries sorted by path, length-prefixed fields — so the same file set always
hashes to the same digest regardless of input order. That determinism is
what makes mirror sync and cold-store backup verifiable by digest comparison
alone.

On disk a repository is::

    <root>/index              canonical serialized index
    <root>/bundles/<digest>   bundle payload files
    <root>/announcements.log  one record per line, append-only
"""

from __future__ import annotations

import logging
import struct
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .canonical import HASH_NAME, canonical_bytes, canonical_json, digest_bytes, is_digest
from .errors import (
    AlreadyPublished,
    BadIdentifier,
    DanglingDependency,
    DigestMismatch,
    DuplicatePackage,
    DuplicatePath,
    EmptyRelease,
    IllegalStateChange,
    MirrorAhead,
    NotFound,
    PathTraversal,
    StorageFailure,
)

logger = logging.getLogger(__name__)

BUNDLE_MAGIC = b"GOB1"


# --- bundles -----------------------------------------------------------------

@dataclass(frozen=True)
class BundleEntry:
    path: str
    mode: int
    content: bytes


@dataclass(frozen=True)
class Bundle:
    digest: str
    entries: tuple[BundleEntry, ...]
    payload: bytes


class BundleVerdict(str, Enum):
    OK = "OK"
    CORRUPT = "CORRUPT"


def _validate_entry_path(path: str) -> None:
    if not path:
        raise PathTraversal("empty path")
    if path.startswith("/"):
        raise PathTraversal(f"absolute path not allowed: {path!r}")
    if "\\" in path:
        raise PathTraversal(f"backslash in path: {path!r}")
    for segment in path.split("/"):
        if segment in ("", ".", ".."):
            raise PathTraversal(f"bad path component in {path!r}")


def _encode_payload(entries: Sequence[BundleEntry]) -> bytes:
    chunks = [BUNDLE_MAGIC, struct.pack(">I", len(entries))]
    for entry in entries:
        raw_path = entry.path.encode("utf-8")
        chunks.append(struct.pack(">I", len(raw_path)))
        chunks.append(raw_path)
        chunks.append(struct.pack(">I", entry.mode))
        chunks.append(struct.pack(">Q", len(entry.content)))
        chunks.append(entry.content)
    return b"".join(chunks)


def build_bundle(files: Iterable[tuple[str, int, bytes | str]]) -> Bundle:
    """Pack a file set into a canonical bundle.

    Input order is irrelevant: entries are sorted by path before
    serialization, so the digest only depends on the set itself.
    """
    entries: list[BundleEntry] = []
    for path, mode, content in files:
        _validate_entry_path(path)
        data = content.encode("utf-8") if isinstance(content, str) else bytes(content)
        entries.append(BundleEntry(path=path, mode=int(mode), content=data))
    entries.sort(key=lambda e: e.path)
    for a, b in zip(entries, entries[1:]):
        if a.path == b.path:
            raise DuplicatePath(f"duplicate path in bundle: {a.path!r}")
    payload = _encode_payload(entries)
    return Bundle(digest=digest_bytes(payload), entries=tuple(entries), payload=payload)


def parse_bundle_payload(payload: bytes) -> Bundle:
    """Decode a canonical payload back into a bundle (digest recomputed)."""
    view = memoryview(payload)
    if bytes(view[:4]) != BUNDLE_MAGIC:
        raise DigestMismatch("not a bundle payload")
    offset = 4
    try:
        (count,) = struct.unpack_from(">I", view, offset)
        offset += 4
        entries = []
        for _ in range(count):
            (path_len,) = struct.unpack_from(">I", view, offset)
            offset += 4
            path = bytes(view[offset : offset + path_len]).decode("utf-8")
            offset += path_len
            (mode,) = struct.unpack_from(">I", view, offset)
            offset += 4
            (content_len,) = struct.unpack_from(">Q", view, offset)
            offset += 8
            content = bytes(view[offset : offset + content_len])
            if len(content) != content_len:
                raise DigestMismatch("truncated bundle payload")
            offset += content_len
            entries.append(BundleEntry(path=path, mode=mode, content=content))
    except struct.error as exc:
        raise DigestMismatch(f"truncated bundle payload: {exc}") from exc
    if offset != len(payload):
        raise DigestMismatch("trailing bytes after bundle payload")
    return Bundle(digest=digest_bytes(payload), entries=tuple(entries), payload=bytes(payload))


def verify_bundle(bundle: Bundle) -> BundleVerdict:
    if digest_bytes(bundle.payload) == bundle.digest:
        return BundleVerdict.OK
    return BundleVerdict.CORRUPT


# --- manifests ----------------------------------------------------------------

class ReleaseState(str, Enum):
    DRAFT = "DRAFT"
    RELEASED = "RELEASED"
    VALIDATED = "VALIDATED"
    ARCHIVED = "ARCHIVED"
    DEPRECATED = "DEPRECATED"


_RELEASE_EDGES: dict[ReleaseState, frozenset[ReleaseState]] = {
    ReleaseState.DRAFT: frozenset({ReleaseState.RELEASED, ReleaseState.DEPRECATED}),
    ReleaseState.RELEASED: frozenset({ReleaseState.VALIDATED, ReleaseState.DEPRECATED}),
    ReleaseState.VALIDATED: frozenset({ReleaseState.ARCHIVED, ReleaseState.DEPRECATED}),
    ReleaseState.ARCHIVED: frozenset({ReleaseState.DEPRECATED}),
    ReleaseState.DEPRECATED: frozenset(),
}

_PUBLISHABLE_STATES = (
    ReleaseState.RELEASED,
    ReleaseState.VALIDATED,
    ReleaseState.ARCHIVED,
)


@dataclass(frozen=True)
class PackageDescriptor:
    name: str
    version: str
    digest: str
    size: int
    depends: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.name or not self.version:
            raise BadIdentifier("package name and version must be non-empty")
        if not is_digest(self.digest):
            raise BadIdentifier(f"package digest must be {HASH_NAME} hex: {self.digest!r}")
        if self.size < 0:
            raise BadIdentifier("package size must be non-negative")
        if self.name in self.depends:
            raise DanglingDependency(f"package {self.name!r} depends on itself")
        if len(set(self.depends)) != len(self.depends):
            raise DanglingDependency(f"duplicate dependency in package {self.name!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "digest": self.digest,
            "size": self.size,
            "depends": list(self.depends),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PackageDescriptor":
        return cls(
            name=data["name"],
            version=data["version"],
            digest=data["digest"],
            size=int(data["size"]),
            depends=tuple(data.get("depends", ())),
        )


@dataclass(frozen=True)
class ReleaseManifest:
    project: str
    version: str
    architectures: tuple[str, ...]
    packages: tuple[PackageDescriptor, ...]
    created_at: int
    state: ReleaseState
    manifest_digest: str

    @property
    def key(self) -> str:
        return f"{self.project}/{self.version}"

    def content_dict(self) -> dict:
        # Digest basis: the fixed content only. Timestamps and lifecycle
        # state stay out so identical inputs always hash identically.
        return {
            "project": self.project,
            "version": self.version,
            "architectures": list(self.architectures),
            "packages": [p.to_dict() for p in self.packages],
        }

    def compute_digest(self) -> str:
        return digest_bytes(canonical_bytes(self.content_dict()))

    def verify_digest(self) -> bool:
        return self.compute_digest() == self.manifest_digest

    def with_state(self, new_state: ReleaseState) -> "ReleaseManifest":
        if new_state not in _RELEASE_EDGES[self.state]:
            raise IllegalStateChange(
                f"release state {self.state.value} cannot move to {new_state.value}"
            )
        return replace(self, state=new_state)

    def to_dict(self) -> dict:
        return {
            **self.content_dict(),
            "created_at": self.created_at,
            "state": self.state.value,
            "manifest_digest": self.manifest_digest,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReleaseManifest":
        return cls(
            project=data["project"],
            version=data["version"],
            architectures=tuple(data["architectures"]),
            packages=tuple(PackageDescriptor.from_dict(p) for p in data["packages"]),
            created_at=int(data["created_at"]),
            state=ReleaseState(data["state"]),
            manifest_digest=data["manifest_digest"],
        )


def cut_release(
    project: str,
    version: str,
    packages: Sequence[PackageDescriptor],
    *,
    architectures: Sequence[str] = ("slc3_ia32",),
    created_at: int = 0,
) -> ReleaseManifest:
    """Fix the content of a release and return it in RELEASED state."""
    if not project or not version:
        raise BadIdentifier("project and version must be non-empty")
    if not packages:
        raise EmptyRelease(f"release {project}/{version} has no packages")
    if not architectures:
        raise BadIdentifier("at least one architecture label is required")
    names = [p.name for p in packages]
    seen: set[str] = set()
    for name in names:
        if name in seen:
            raise DuplicatePackage(f"package {name!r} appears twice in {project}/{version}")
        seen.add(name)
    for pkg in packages:
        for dep in pkg.depends:
            if dep not in seen:
                raise DanglingDependency(
                    f"package {pkg.name!r} depends on unknown package {dep!r}"
                )
    ordered = tuple(sorted(packages, key=lambda p: p.name))
    arch = tuple(sorted(set(architectures)))
    manifest = ReleaseManifest(
        project=project,
        version=version,
        architectures=arch,
        packages=ordered,
        created_at=created_at,
        state=ReleaseState.RELEASED,
        manifest_digest="0" * 64,
    )
    return replace(manifest, manifest_digest=manifest.compute_digest())


# --- repository -----------------------------------------------------------------

@dataclass
class Announcement:
    release: str
    at: int

    def to_dict(self) -> dict:
        return {"release": self.release, "at": self.at}


@dataclass
class MirrorDelta:
    transferred_releases: list[str] = field(default_factory=list)
    transferred_bundles: list[str] = field(default_factory=list)
    removed_releases: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.transferred_releases or self.transferred_bundles or self.removed_releases)

    def to_dict(self) -> dict:
        return {
            "transferred_releases": self.transferred_releases,
            "transferred_bundles": self.transferred_bundles,
            "removed_releases": self.removed_releases,
        }


@dataclass
class BackupRecord:
    release: str
    digests: list[str]
    coldstore: str

    def to_dict(self) -> dict:
        return {"release": self.release, "digests": self.digests, "coldstore": self.coldstore}


class Repository:
    """Content-addressed release store with a monotone index generation.

    Index mutations are serialized through one writer lock; bundle payload
    files are immutable once written.
    """

    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)
        self._lock = threading.RLock()
        self._generation = 0
        self._releases: dict[str, dict] = {}
        self._announcements: list[Announcement] = []
        self.bundles_dir = self.root / "bundles"
        try:
            self.bundles_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageFailure(f"cannot create repository root {self.root}: {exc}") from exc
        if (self.root / "index").exists():
            self._load_index()
        else:
            self._save_index()

    # -- persistence --

    def _load_index(self) -> None:
        import json

        data = json.loads((self.root / "index").read_text("utf-8"))
        if data.get("hash") != HASH_NAME:
            raise StorageFailure(f"index hash algorithm mismatch: {data.get('hash')!r}")
        self._generation = int(data["generation"])
        self._releases = data["releases"]
        self._announcements = [Announcement(**a) for a in data["announcements"]]

    def _save_index(self) -> None:
        data = {
            "hash": HASH_NAME,
            "generation": self._generation,
            "releases": self._releases,
            "announcements": [a.to_dict() for a in self._announcements],
        }
        tmp = self.root / "index.tmp"
        try:
            tmp.write_text(canonical_json(data), "utf-8")
            tmp.replace(self.root / "index")
        except OSError as exc:
            raise StorageFailure(f"cannot write index under {self.root}: {exc}") from exc

    # -- queries --

    @property
    def generation(self) -> int:
        with self._lock:
            return self._generation

    def has_release(self, project: str, version: str) -> bool:
        with self._lock:
            return f"{project}/{version}" in self._releases

    def release_keys(self) -> list[str]:
        with self._lock:
            return sorted(self._releases)

    def manifest(self, project: str, version: str) -> ReleaseManifest:
        with self._lock:
            entry = self._releases.get(f"{project}/{version}")
        if entry is None:
            raise NotFound(f"release {project}/{version} not in repository")
        return ReleaseManifest.from_dict(entry["manifest"])

    def match_payload(self, payload: str) -> tuple[str, str] | None:
        """Resolve a tag payload ``<project>_<version>`` to a known release."""
        with self._lock:
            for key in self._releases:
                project, version = key.split("/", 1)
                if f"{project}_{version}" == payload:
                    return project, version
        return None

    def bundle_payload(self, digest: str) -> bytes:
        path = self.bundles_dir / digest
        if not path.exists():
            raise NotFound(f"bundle {digest} not in repository {self.root}")
        return path.read_bytes()

    def announcements(self) -> list[Announcement]:
        with self._lock:
            return list(self._announcements)

    # -- mutations --

    def publish_release(
        self, manifest: ReleaseManifest, bundles: Sequence[Bundle], *, at: int = 0
    ) -> Announcement:
        """Store a release and announce it; fails without touching the index."""
        if manifest.state not in _PUBLISHABLE_STATES:
            raise IllegalStateChange(
                f"release {manifest.key} is {manifest.state.value}, not publishable"
            )
        if not manifest.verify_digest():
            raise DigestMismatch(f"manifest digest does not match content for {manifest.key}")
        by_digest = {b.digest: b for b in bundles}
        for bundle in bundles:
            if verify_bundle(bundle) is not BundleVerdict.OK:
                raise DigestMismatch(f"bundle {bundle.digest} fails self-verification")
        for pkg in manifest.packages:
            if pkg.digest not in by_digest:
                raise DigestMismatch(
                    f"package {pkg.name!r} digest {pkg.digest} has no matching bundle"
                )
        with self._lock:
            if manifest.key in self._releases:
                raise AlreadyPublished(f"release {manifest.key} already published")
            for bundle in bundles:
                path = self.bundles_dir / bundle.digest
                if not path.exists():
                    path.write_bytes(bundle.payload)
            announcement = Announcement(release=manifest.key, at=at)
            self._releases[manifest.key] = {
                "manifest": manifest.to_dict(),
                "bundles": {b.digest: f"bundles/{b.digest}" for b in bundles},
            }
            self._announcements.append(announcement)
            self._generation += 1
            self._save_index()
            with (self.root / "announcements.log").open("a", encoding="utf-8") as fh:
                fh.write(canonical_json(announcement.to_dict()) + "\n")
        logger.info("published %s (generation %d)", manifest.key, self._generation)
        return announcement

    def bundle_digests(self, project: str, version: str) -> list[str]:
        with self._lock:
            entry = self._releases.get(f"{project}/{version}")
        if entry is None:
            raise NotFound(f"release {project}/{version} not in repository")
        return sorted(entry["bundles"])

    def all_bundle_digests(self) -> set[str]:
        with self._lock:
            out: set[str] = set()
            for entry in self._releases.values():
                out.update(entry["bundles"])
            return out

    def _adopt(self, releases: dict[str, dict], generation: int) -> None:
        with self._lock:
            self._releases = releases
            self._generation = generation
            self._save_index()


# --- cold store ---------------------------------------------------------------

def backup_release(
    repo: Repository, project: str, version: str, coldstore: Path | str
) -> BackupRecord:
    """Copy a published release into the write-once cold store.

    Idempotent: re-running verifies existing copies byte-for-byte and leaves
    a single record. A conflicting existing copy is a storage failure, never
    an overwrite.
    """
    manifest = repo.manifest(project, version)
    digests = repo.bundle_digests(project, version)
    root = Path(coldstore)
    bundles_dir = root / "bundles"
    records_dir = root / "releases"
    try:
        bundles_dir.mkdir(parents=True, exist_ok=True)
        records_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageFailure(f"cold store {root} not writable: {exc}") from exc

    try:
        for digest in digests:
            payload = repo.bundle_payload(digest)
            dest = bundles_dir / digest
            if dest.exists():
                if digest_bytes(dest.read_bytes()) != digest:
                    raise StorageFailure(f"cold store copy of {digest} diverges (write-once)")
                continue
            dest.write_bytes(payload)
        record = BackupRecord(release=manifest.key, digests=digests, coldstore=str(root))
        record_path = records_dir / f"{project}_{version}.json"
        record_text = canonical_json(record.to_dict())
        if record_path.exists():
            if record_path.read_text("utf-8") != record_text:
                raise StorageFailure(f"cold store record for {manifest.key} diverges")
        else:
            record_path.write_text(record_text, "utf-8")
    except OSError as exc:
        raise StorageFailure(f"cold store write failed under {root}: {exc}") from exc
    return record


# --- mirroring -------------------------------------------------------------------

def sync_mirror(primary: Repository, mirror: Repository) -> MirrorDelta:
    """Pull the primary's content into the mirror and report the delta.

    After a successful sync the mirror holds exactly the primary's releases
    and bundles and adopts its generation. A mirror whose generation is ahead
    of the primary signals split brain and is refused.
    """
    delta = MirrorDelta()
    if mirror.generation > primary.generation:
        raise MirrorAhead(
            f"mirror generation {mirror.generation} > primary {primary.generation}"
        )
    with primary._lock:
        primary_releases = {k: dict(v) for k, v in primary._releases.items()}
        primary_generation = primary._generation
    mirror_keys = set(mirror.release_keys())
    wanted_digests = set()
    for entry in primary_releases.values():
        wanted_digests.update(entry["bundles"])
    for digest in sorted(wanted_digests):
        dest = mirror.bundles_dir / digest
        if dest.exists() and digest_bytes(dest.read_bytes()) == digest:
            continue
        dest.write_bytes(primary.bundle_payload(digest))
        delta.transferred_bundles.append(digest)
    delta.transferred_releases = sorted(set(primary_releases) - mirror_keys)
    delta.removed_releases = sorted(mirror_keys - set(primary_releases))
    for stale in delta.removed_releases:
        logger.warning("mirror %s drops release %s absent from primary", mirror.root, stale)
    if not delta.empty or mirror.generation != primary_generation:
        mirror._adopt(primary_releases, primary_generation)
    return delta


# --- fetching ----------------------------------------------------------------------

def fetch(
    release: tuple[str, str], sources: Sequence[Repository]
) -> dict[str, Bundle]:
    """Fetch digest-verified bundles from the first source that has them.

    A source holding a corrupt copy is skipped; the caller's source order
    encodes preference (mirrors first).
    """
    project, version = release
    saw_release = False
    last_mismatch: DigestMismatch | None = None
    for source in sources:
        if not source.has_release(project, version):
            continue
        saw_release = True
        try:
            manifest = source.manifest(project, version)
            bundles: dict[str, Bundle] = {}
            for digest in source.bundle_digests(project, version):
                payload = source.bundle_payload(digest)
                if digest_bytes(payload) != digest:
                    raise DigestMismatch(
                        f"bundle {digest} corrupt in source {source.root}"
                    )
                bundles[digest] = parse_bundle_payload(payload)
            for pkg in manifest.packages:
                if pkg.digest not in bundles:
                    raise DigestMismatch(
                        f"package {pkg.name!r} bundle missing in source {source.root}"
                    )
            return bundles
        except (DigestMismatch, NotFound) as exc:
            last_mismatch = exc if isinstance(exc, DigestMismatch) else last_mismatch
            logger.warning("source %s unusable for %s/%s: %s", source.root, project, version, exc)
            continue
    if saw_release and last_mismatch is not None:
        raise last_mismatch
    raise NotFound(f"release {project}/{version} not available from any source")
