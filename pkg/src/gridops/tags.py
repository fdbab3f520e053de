"""Site tags: the published strings advertising or requesting software.

Grammar::

    VO-<vo>-<payload>                    kind = installed
    VO-<vo>-<payload>-request-install    kind = request

``vo`` carries no dash; identifiers fed to the renderers are restricted to
``[A-Za-z0-9_.]`` so a rendered payload can never collide with the request
suffix. Comparisons are exact byte equality.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .authz import Action, AuthzService, Credential
from .canonical import canonical_json
from .errors import BadIdentifier, NotATag, Unauthorized, UnknownSite

_IDENTIFIER_RE = re.compile(r"^[A-Za-z0-9_.]+$")
_TAG_RE = re.compile(r"^VO-([A-Za-z0-9_.]+)-([A-Za-z0-9_.][A-Za-z0-9_.-]*)$")
_REQUEST_SUFFIX = "-request-install"


class TagKind(str, Enum):
    INSTALLED = "installed"
    REQUEST = "request"


@dataclass(frozen=True)
class Tag:
    raw: str
    vo: str
    payload: str
    kind: TagKind


def _check_identifier(value: str, what: str) -> None:
    if not value or not _IDENTIFIER_RE.match(value):
        raise BadIdentifier(f"{what} must be non-empty [A-Za-z0-9_.]: {value!r}")


def render_install_tag(vo: str, project: str, version: str) -> Tag:
    _check_identifier(vo, "vo")
    _check_identifier(project, "project")
    _check_identifier(version, "version")
    payload = f"{project}_{version}"
    return Tag(raw=f"VO-{vo}-{payload}", vo=vo, payload=payload, kind=TagKind.INSTALLED)


def render_request_tag(vo: str, project: str, version: str) -> Tag:
    installed = render_install_tag(vo, project, version)
    return Tag(
        raw=installed.raw + _REQUEST_SUFFIX,
        vo=vo,
        payload=installed.payload,
        kind=TagKind.REQUEST,
    )


def parse_tag(raw: str) -> Tag:
    if not isinstance(raw, str) or any(c.isspace() for c in raw):
        raise NotATag(f"tags carry no whitespace: {raw!r}")
    kind = TagKind.INSTALLED
    body = raw
    if raw.endswith(_REQUEST_SUFFIX):
        kind = TagKind.REQUEST
        body = raw[: -len(_REQUEST_SUFFIX)]
    match = _TAG_RE.match(body)
    if not match:
        raise NotATag(f"not a tag: {raw!r}")
    vo, payload = match.group(1), match.group(2)
    return Tag(raw=raw, vo=vo, payload=payload, kind=kind)


@dataclass
class SiteTagSet:
    site: str
    tags: dict[str, Tag] = field(default_factory=dict)
    version: int = 0

    def sorted_raw(self) -> list[str]:
        return sorted(self.tags)


class TagStore:
    """Per-site tag sets with a fleet-wide query.

    One serialized mutator per site; queries read a consistent snapshot per
    site. When a state directory is given, each site's set is persisted as a
    small JSON document on every mutation.
    """

    def __init__(self, state_dir: Path | str | None = None) -> None:
        self._sites: dict[str, SiteTagSet] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        self._state_dir = Path(state_dir) if state_dir else None
        if self._state_dir:
            self._state_dir.mkdir(parents=True, exist_ok=True)
            for path in sorted(self._state_dir.glob("*.json")):
                self._load_site(path)

    def _load_site(self, path: Path) -> None:
        import json

        data = json.loads(path.read_text("utf-8"))
        tag_set = SiteTagSet(site=data["site"], version=int(data["version"]))
        for raw in data["tags"]:
            tag = parse_tag(raw)
            tag_set.tags[tag.raw] = tag
        self._sites[tag_set.site] = tag_set
        self._locks[tag_set.site] = threading.Lock()

    def _persist(self, tag_set: SiteTagSet) -> None:
        if not self._state_dir:
            return
        doc = {
            "site": tag_set.site,
            "version": tag_set.version,
            "tags": tag_set.sorted_raw(),
        }
        path = self._state_dir / f"{tag_set.site}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(canonical_json(doc), "utf-8")
        tmp.replace(path)

    def register_site(self, site: str) -> None:
        with self._registry_lock:
            if site not in self._sites:
                self._sites[site] = SiteTagSet(site=site)
                self._locks[site] = threading.Lock()
                self._persist(self._sites[site])

    def known_sites(self) -> list[str]:
        with self._registry_lock:
            return sorted(self._sites)

    def _require(self, site: str) -> SiteTagSet:
        tag_set = self._sites.get(site)
        if tag_set is None:
            raise UnknownSite(f"site {site!r} has no tag set")
        return tag_set

    def publish(self, site: str, tag: Tag) -> SiteTagSet:
        tag_set = self._require(site)
        with self._locks[site]:
            if tag.raw not in tag_set.tags:
                tag_set.tags[tag.raw] = tag
                tag_set.version += 1
                self._persist(tag_set)
            return tag_set

    def retract(self, site: str, tag: Tag) -> SiteTagSet:
        tag_set = self._require(site)
        with self._locks[site]:
            if tag.raw in tag_set.tags:
                del tag_set.tags[tag.raw]
                tag_set.version += 1
                self._persist(tag_set)
            return tag_set

    def site_tags(self, site: str) -> list[Tag]:
        tag_set = self._require(site)
        with self._locks[site]:
            return [tag_set.tags[raw] for raw in sorted(tag_set.tags)]

    def tag_set_version(self, site: str) -> int:
        return self._require(site).version

    def query_sites(self, tag: Tag | str) -> list[str]:
        raw = tag.raw if isinstance(tag, Tag) else tag
        hits = []
        for site in self.known_sites():
            with self._locks[site]:
                if raw in self._sites[site].tags:
                    hits.append(site)
        return hits


class TagService:
    """Authorization-gated front of the tag store."""

    def __init__(self, store: TagStore, authz: AuthzService) -> None:
        self.store = store
        self.authz = authz

    def publish(self, cred: Credential, site: str, tag: Tag) -> SiteTagSet:
        decision = self.authz.authorize(cred, Action.PUBLISH_TAG, site)
        if not decision.allowed:
            raise Unauthorized(decision.reason)
        return self.store.publish(site, tag)

    def retract(self, cred: Credential, site: str, tag: Tag) -> SiteTagSet:
        decision = self.authz.authorize(cred, Action.PUBLISH_TAG, site)
        if not decision.allowed:
            raise Unauthorized(decision.reason)
        return self.store.retract(site, tag)
