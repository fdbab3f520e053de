"""Command-line surface mirroring the gate API.

Two ways to reach a system: ``--url`` talks to a running gate over HTTP,
``--local CONFIG`` builds the orchestrator in-process from a config file and
drives the same app through an in-memory transport. Repository preparation
(release cut), cold-store backup, mirror sync, direct probes, and watch
cycles are administrative and need ``--local``.
"""

from __future__ import annotations

import base64
import json
import time
from pathlib import Path

import click

from .authz import Role, mint_token
from .canonical import canonical_json
from .config import load_config
from .errors import OrchestratorError
from .gate import build_app
from .repo import (
    PackageDescriptor,
    ReleaseManifest,
    backup_release,
    build_bundle,
    cut_release,
    sync_mirror,
)
from .service import Orchestrator


class CliError(click.ClickException):
    pass


class Session:
    """Lazily-built connection to a gate (remote or in-process)."""

    def __init__(self, url: str | None, config_path: str | None, token: str | None) -> None:
        if url and config_path:
            raise CliError("use either --url or --local, not both")
        self.url = url
        self.config_path = config_path
        self.token = token
        self.output = "json"
        self._orch: Orchestrator | None = None
        self._client = None

    def orchestrator(self) -> Orchestrator:
        if self.config_path is None:
            raise CliError("this command needs --local CONFIG (it runs in-process)")
        if self._orch is None:
            self._orch = Orchestrator(load_config(self.config_path))
        return self._orch

    def client(self):
        if self._client is None:
            if self.url:
                import httpx

                self._client = httpx.Client(base_url=self.url, timeout=60.0)
            else:
                from starlette.testclient import TestClient

                self._client = TestClient(build_app(self.orchestrator()))
        return self._client

    def request(self, method: str, path: str, body: dict | None = None, auth: bool = False) -> dict:
        headers = {}
        if auth:
            if not self.token:
                raise CliError("this command needs --token (or --token-file)")
            headers["Authorization"] = f"Bearer {self.token}"
        response = self.client().request(method, path, json=body, headers=headers)
        try:
            payload = response.json()
        except ValueError:
            payload = {"error": "internal", "message": response.text}
        if response.status_code >= 400:
            message = payload.get("message", payload.get("error", "request failed"))
            raise CliError(f"{payload.get('error', 'error')}: {message}")
        return payload


pass_session = click.make_pass_decorator(Session)


def _echo_json(data: object) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


@click.group()
@click.option("--url", default=None, help="Base URL of a running gate.")
@click.option(
    "--local", "config_path", default=None, type=click.Path(), help="Config file for in-process mode."
)
@click.option("--token", default=None, help="Bearer token for mutating calls.")
@click.option(
    "--token-file", default=None, type=click.Path(exists=True), help="Read the bearer token from a file."
)
@click.option("--output", type=click.Choice(["json", "table"]), default="json")
@click.pass_context
def main(ctx: click.Context, url: str | None, config_path: str | None, token: str | None, token_file: str | None, output: str) -> None:
    """Operate a gridops deployment system."""
    if token_file and not token:
        token = Path(token_file).read_text("utf-8").strip()
    ctx.obj = Session(url, config_path, token)
    ctx.obj.output = output


# -- release ---------------------------------------------------------------

@main.group()
def release() -> None:
    """Cut, publish, and back up releases."""


@release.command("cut")
@click.option("--project", required=True)
@click.option("--version", required=True)
@click.option("--arch", "architectures", multiple=True, required=True)
@click.option(
    "--package",
    "packages",
    multiple=True,
    required=True,
    help="NAME=DIR: package a directory tree under NAME.",
)
@click.option(
    "--depends",
    "depends",
    multiple=True,
    help="NAME=DEP1,DEP2: dependency edges between packages.",
)
@click.option("--out", "out_dir", required=True, type=click.Path())
def release_cut(project: str, version: str, architectures: tuple[str, ...], packages: tuple[str, ...], depends: tuple[str, ...], out_dir: str) -> None:
    """Fix a release's content from local file trees and write it out."""
    dep_map: dict[str, tuple[str, ...]] = {}
    for spec in depends:
        name, _, deps = spec.partition("=")
        dep_map[name] = tuple(d for d in deps.split(",") if d)
    descriptors = []
    bundles = {}
    try:
        for spec in packages:
            name, _, tree = spec.partition("=")
            if not name or not tree:
                raise CliError(f"--package wants NAME=DIR, got {spec!r}")
            root = Path(tree)
            if not root.is_dir():
                raise CliError(f"package tree {root} is not a directory")
            files = []
            for path in sorted(p for p in root.rglob("*") if p.is_file()):
                rel = path.relative_to(root).as_posix()
                files.append((rel, path.stat().st_mode & 0o7777, path.read_bytes()))
            bundle = build_bundle(files)
            bundles[name] = bundle
            descriptors.append(
                PackageDescriptor(
                    name=name,
                    version=version,
                    digest=bundle.digest,
                    size=len(bundle.payload),
                    depends=dep_map.get(name, ()),
                )
            )
        manifest = cut_release(
            project,
            version,
            descriptors,
            architectures=architectures,
            created_at=int(time.time() * 1000),
        )
    except OrchestratorError as exc:
        raise CliError(f"{exc.code}: {exc}") from exc
    out = Path(out_dir)
    (out / "bundles").mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(canonical_json(manifest.to_dict()), "utf-8")
    for bundle in bundles.values():
        (out / "bundles" / bundle.digest).write_bytes(bundle.payload)
    click.echo(f"cut {manifest.key} digest {manifest.manifest_digest}")


def _load_release_dir(release_dir: str) -> tuple[dict, list[str]]:
    root = Path(release_dir)
    manifest = json.loads((root / "manifest.json").read_text("utf-8"))
    encoded = []
    for path in sorted((root / "bundles").iterdir()):
        encoded.append(base64.b64encode(path.read_bytes()).decode("ascii"))
    return manifest, encoded


@release.command("publish")
@click.option("--release-dir", required=True, type=click.Path(exists=True))
@pass_session
def release_publish(session: Session, release_dir: str) -> None:
    """Publish a cut release through the gate."""
    manifest, bundles = _load_release_dir(release_dir)
    payload = session.request(
        "POST", "/releases", {"manifest": manifest, "bundles": bundles}, auth=True
    )
    _echo_json(payload)


@release.command("backup")
@click.option("--project", required=True)
@click.option("--version", required=True)
@click.option("--coldstore", required=True, type=click.Path())
@pass_session
def release_backup(session: Session, project: str, version: str, coldstore: str) -> None:
    """Copy a published release into the cold store (in-process)."""
    orch = session.orchestrator()
    try:
        record = backup_release(orch.repository, project, version, coldstore)
    except OrchestratorError as exc:
        raise CliError(f"{exc.code}: {exc}") from exc
    _echo_json(record.to_dict())


# -- mirror -----------------------------------------------------------------

@main.group()
def mirror() -> None:
    """Mirror maintenance."""


@mirror.command("sync")
@pass_session
def mirror_sync(session: Session) -> None:
    """Pull the primary repository into the configured mirror (in-process)."""
    orch = session.orchestrator()
    if orch.mirror is None:
        raise CliError("no mirror_root configured")
    try:
        delta = sync_mirror(orch.repository, orch.mirror)
    except OrchestratorError as exc:
        raise CliError(f"{exc.code}: {exc}") from exc
    _echo_json(delta.to_dict())


# -- jobs --------------------------------------------------------------------

@main.group()
def job() -> None:
    """Submit and inspect deployment jobs."""


@job.command("submit")
@click.option("--site", required=True)
@click.option("--release", "release_key", required=True, help="PROJECT/VERSION")
@click.option("--action", type=click.Choice(["install", "remove"]), default="install")
@pass_session
def job_submit(session: Session, site: str, release_key: str, action: str) -> None:
    project, _, version = release_key.partition("/")
    if not project or not version:
        raise CliError("--release wants PROJECT/VERSION")
    payload = session.request(
        "POST",
        "/jobs",
        {"site": site, "project": project, "version": version, "action": action},
        auth=True,
    )
    click.echo(payload["job"]["job_id"])


@job.command("status")
@click.argument("job_id")
@pass_session
def job_status(session: Session, job_id: str) -> None:
    _echo_json(session.request("GET", f"/jobs/{job_id}"))


# -- sites ----------------------------------------------------------------------

@main.group()
def site() -> None:
    """Fleet inspection."""


@site.command("list")
@pass_session
def site_list(session: Session) -> None:
    payload = session.request("GET", "/sites")
    if session.output == "table":
        click.echo(f"{'SITE':<20} {'ARCH':<14} OFFLINE")
        for entry in payload["sites"]:
            click.echo(f"{entry['site']:<20} {entry['architecture']:<14} {entry['offline']}")
        return
    _echo_json(payload)


@site.command("probe")
@click.option("--site", "site_id", required=True)
@pass_session
def site_probe(session: Session, site_id: str) -> None:
    """Probe one site immediately (in-process)."""
    orch = session.orchestrator()
    try:
        result = orch.watch.probe(site_id)
    except OrchestratorError as exc:
        raise CliError(f"{exc.code}: {exc}") from exc
    _echo_json(result.to_dict())


@site.command("history")
@click.option("--site", "site_id", required=True)
@click.option("--last", default=10, show_default=True)
@pass_session
def site_history(session: Session, site_id: str, last: int) -> None:
    _echo_json(session.request("GET", f"/sites/{site_id}/history?last={last}"))


# -- tags --------------------------------------------------------------------------

@main.group()
def tag() -> None:
    """Request-install tags and site tag lists."""


@tag.command("request")
@click.option("--site", required=True)
@click.option("--release", "release_key", required=True, help="PROJECT/VERSION")
@pass_session
def tag_request(session: Session, site: str, release_key: str) -> None:
    project, _, version = release_key.partition("/")
    if not project or not version:
        raise CliError("--release wants PROJECT/VERSION")
    payload = session.request(
        "POST",
        f"/sites/{site}/tags/request",
        {"project": project, "version": version},
        auth=True,
    )
    click.echo(payload["tag"])


@tag.command("list")
@click.option("--site", required=True)
@pass_session
def tag_list(session: Session, site: str) -> None:
    _echo_json(session.request("GET", f"/sites/{site}/tags"))


# -- tickets --------------------------------------------------------------------------

@main.group()
def ticket() -> None:
    """Error-treatment tickets."""


@ticket.command("list")
@pass_session
def ticket_list(session: Session) -> None:
    _echo_json(session.request("GET", "/tickets"))


@ticket.command("close")
@click.argument("ticket_id")
@pass_session
def ticket_close(session: Session, ticket_id: str) -> None:
    _echo_json(session.request("POST", f"/tickets/{ticket_id}/close", auth=True))


# -- watch -------------------------------------------------------------------------------

@main.group()
def watch() -> None:
    """Monitoring."""


@watch.command("run-cycle")
@pass_session
def watch_run_cycle(session: Session) -> None:
    """Run one monitoring cycle (in-process)."""
    orch = session.orchestrator()
    try:
        report = orch.watch.cycle()
    except OrchestratorError as exc:
        raise CliError(f"{exc.code}: {exc}") from exc
    _echo_json(report.to_dict())


# -- tokens and the service ------------------------------------------------------------------

@main.group()
def token() -> None:
    """Credential minting for operators and tests."""


@token.command("mint")
@click.option("--key-file", required=True, type=click.Path(exists=True))
@click.option("--subject", required=True)
@click.option("--vo", default="cms", show_default=True)
@click.option("--role", type=click.Choice([r.value for r in Role]), required=True)
@click.option("--ttl-s", default=3600, show_default=True)
def token_mint(key_file: str, subject: str, vo: str, role: str, ttl_s: int) -> None:
    key = Path(key_file).read_bytes().strip()
    expires_at = int(time.time() * 1000) + ttl_s * 1000
    click.echo(mint_token(key, subject, vo, Role(role), expires_at))


@main.command("serve")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def serve_cmd(config_path: str) -> None:
    """Run the gate service."""
    from .gate import serve

    orch = Orchestrator(load_config(config_path))
    serve(orch)


if __name__ == "__main__":
    main()
