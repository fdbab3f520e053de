"""Service gate: the HTTP API every script and console goes through.

Plain HTTP with bearer tokens; bodies are canonical-style JSON. Every
response carries the ledger sequence number it reflects so readers can
reason about staleness. Error mapping is total: each module error code maps
to exactly one status code.
"""

from __future__ import annotations

import base64
import binascii
import logging
import threading
from typing import Any

from fastapi import Depends, FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .authz import Action, Credential
from .errors import BadRequest, MalformedToken, OrchestratorError, Unauthorized
from .harness import Fault, FaultKind
from .lifecycle import JobAction, JobState
from .repo import Bundle, ReleaseManifest, parse_bundle_payload
from .service import Orchestrator
from .tags import render_request_tag

logger = logging.getLogger(__name__)

ERROR_STATUS: dict[str, int] = {
    # authentication
    "auth_error": 401,
    "malformed_token": 401,
    "bad_signature": 401,
    "expired_token": 401,
    "unknown_vo": 401,
    # authorization
    "unauthorized": 403,
    "permission_denied": 403,
    # unknown resources
    "unknown_site": 404,
    "unknown_release": 404,
    "unknown_job": 404,
    "unknown_ticket": 404,
    "not_found": 404,
    # conflicts with current state
    "duplicate_submission": 409,
    "already_published": 409,
    "duplicate_site": 409,
    "illegal_ticket_transition": 409,
    "illegal_state_change": 409,
    "mirror_ahead": 409,
    "cycle_in_progress": 409,
    "not_installed": 409,
    # bad requests
    "bad_request": 400,
    "bad_identifier": 400,
    "empty_release": 400,
    "dangling_dependency": 400,
    "duplicate_package": 400,
    "path_traversal": 400,
    "duplicate_path": 400,
    "not_a_tag": 400,
    "config_invalid": 400,
    # content verification
    "digest_mismatch": 422,
    # infrastructure
    "storage_failure": 500,
    "illegal_transition": 500,
    "task_failed": 500,
    "tag_publish_failed": 500,
    "internal": 500,
    "fetch_failed": 502,
    "site_unreachable": 502,
    "unreachable": 502,
    "disk_full": 507,
}


class SubmitJobBody(BaseModel):
    site: str
    project: str
    version: str
    action: str = Field(default=JobAction.INSTALL.value)


class RequestTagBody(BaseModel):
    project: str
    version: str


class PublishReleaseBody(BaseModel):
    manifest: dict
    bundles: list[str] = Field(default_factory=list)  # base64 payloads


class FaultBody(BaseModel):
    site: str
    fault: dict | None = None
    clear: str | None = None


def build_app(orch: Orchestrator, test_mode: bool | None = None) -> FastAPI:
    app = FastAPI(title="gridops gate", version="0.1.0", docs_url=None, redoc_url=None)
    enable_admin = orch.config.test_mode if test_mode is None else test_mode

    def bearer(request: Request) -> Credential:
        header = request.headers.get("authorization", "")
        scheme, _, token = header.partition(" ")
        if scheme.lower() != "bearer" or not token.strip():
            raise MalformedToken("missing bearer token")
        return orch.authz.authenticate(token.strip())

    @app.exception_handler(OrchestratorError)
    async def orchestrator_error(_: Request, exc: OrchestratorError) -> JSONResponse:
        status = ERROR_STATUS.get(exc.code, 500)
        return JSONResponse(
            status_code=status,
            content={"error": exc.code, "message": str(exc), "seq": orch.ledger.sequence},
        )

    def with_seq(payload: dict[str, Any]) -> dict[str, Any]:
        return {"seq": orch.ledger.sequence, **payload}

    # -- jobs --

    @app.post("/jobs", status_code=201)
    def submit_job(body: SubmitJobBody, cred: Credential = Depends(bearer)):
        try:
            action = JobAction(body.action)
        except ValueError as exc:
            raise BadRequest(f"unknown action {body.action!r}") from exc
        job_id = orch.deploy.submit(cred, body.site, (body.project, body.version), action)
        job = orch.deploy.job(job_id)
        if job.state is JobState.REJECTED:
            return JSONResponse(
                status_code=403,
                content=with_seq(
                    {"error": "unauthorized", "message": "submission rejected", "job": job.to_dict()}
                ),
            )
        return with_seq({"job": job.to_dict()})

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return with_seq({"job": orch.deploy.job(job_id).to_dict()})

    # -- fleet status --

    @app.get("/status")
    def get_status():
        return orch.watch.render_status()

    @app.get("/sites")
    def get_sites():
        sites = []
        for site_id in orch.fleet.site_ids():
            site = orch.fleet.get(site_id)
            sites.append(
                {
                    "site": site_id,
                    "architecture": site.architecture,
                    "offline": orch.ledger.is_offline(site_id),
                }
            )
        return with_seq({"sites": sites})

    @app.get("/sites/{site_id}/history")
    def get_history(site_id: str, last: int = 10):
        orch.fleet.get(site_id)
        entries = [e.to_dict() for e in orch.watch.history(site_id, last)]
        return with_seq({"site": site_id, "entries": entries})

    @app.get("/sites/{site_id}/tags")
    def get_tags(site_id: str):
        tags = [tag.raw for tag in orch.tag_store.site_tags(site_id)]
        return with_seq({"site": site_id, "tags": tags})

    @app.post("/sites/{site_id}/tags/request", status_code=201)
    def request_install(site_id: str, body: RequestTagBody, cred: Credential = Depends(bearer)):
        tag = render_request_tag(orch.config.vo, body.project, body.version)
        tag_set = orch.tags.publish(cred, site_id, tag)
        return with_seq({"site": site_id, "tag": tag.raw, "version": tag_set.version})

    # -- tickets --

    @app.get("/tickets")
    def get_tickets():
        return with_seq({"tickets": [t.to_dict() for t in orch.ledger.tickets_sorted()]})

    @app.post("/tickets/{ticket_id}/close")
    def close_ticket(ticket_id: str, cred: Credential = Depends(bearer)):
        decision = orch.authz.authorize(cred, Action.MANAGE_TICKETS, ticket_id)
        if not decision.allowed:
            raise Unauthorized(decision.reason)
        ticket = orch.ledger.close_ticket(ticket_id, note=f"closed by {cred.subject}")
        return with_seq({"ticket": ticket.to_dict()})

    # -- releases --

    @app.get("/releases")
    def get_releases():
        releases = []
        for key in orch.repository.release_keys():
            project, version = key.split("/", 1)
            manifest = orch.repository.manifest(project, version)
            releases.append(manifest.to_dict())
        announcements = [a.to_dict() for a in orch.repository.announcements()]
        return with_seq(
            {
                "generation": orch.repository.generation,
                "releases": releases,
                "announcements": announcements,
            }
        )

    @app.post("/releases", status_code=201)
    def publish_release(body: PublishReleaseBody, cred: Credential = Depends(bearer)):
        decision = orch.authz.authorize(cred, Action.WRITE_SW_AREA, "repository")
        if not decision.allowed:
            raise Unauthorized(decision.reason)
        try:
            manifest = ReleaseManifest.from_dict(body.manifest)
        except (KeyError, ValueError, TypeError) as exc:
            raise BadRequest(f"bad manifest document: {exc}") from exc
        bundles: list[Bundle] = []
        for encoded in body.bundles:
            try:
                payload = base64.b64decode(encoded.encode("ascii"), validate=True)
            except (binascii.Error, ValueError) as exc:
                raise BadRequest(f"bundle payload is not valid base64: {exc}") from exc
            bundles.append(parse_bundle_payload(payload))
        announcement = orch.repository.publish_release(
            manifest, bundles, at=orch.clock.now_ms()
        )
        return with_seq(
            {
                "announcement": announcement.to_dict(),
                "generation": orch.repository.generation,
            }
        )

    # -- harness admin (test/demo builds only) --

    if enable_admin:

        @app.post("/admin/faults")
        def admin_faults(body: FaultBody, cred: Credential = Depends(bearer)):
            decision = orch.authz.authorize(cred, Action.WRITE_SW_AREA, body.site)
            if not decision.allowed:
                raise Unauthorized(decision.reason)
            if body.fault is not None:
                faults = orch.fleet.inject(body.site, Fault.from_dict(body.fault))
            elif body.clear is not None:
                faults = orch.fleet.clear(body.site, FaultKind(body.clear))
            else:
                faults = dict(orch.fleet.get(body.site).faults)
            return with_seq(
                {"site": body.site, "faults": [f.to_dict() for f in faults.values()]}
            )

        @app.post("/admin/cycle")
        def admin_cycle(cred: Credential = Depends(bearer)):
            decision = orch.authz.authorize(cred, Action.PROBE_READ, "fleet")
            if not decision.allowed:
                raise Unauthorized(decision.reason)
            return with_seq({"cycle": orch.watch.cycle().to_dict()})

    return app


def serve(orch: Orchestrator) -> None:
    """Run the gate with uvicorn, cycling the watcher in the background."""
    import uvicorn

    app = build_app(orch)
    period = orch.config.cycle_period_s
    if period > 0:
        stop = threading.Event()

        def cycle_loop() -> None:
            while not stop.wait(period):
                try:
                    orch.watch.cycle()
                except OrchestratorError as exc:
                    logger.warning("cycle skipped: %s", exc)

        thread = threading.Thread(target=cycle_loop, name="watch-cycle", daemon=True)
        thread.start()
    uvicorn.run(app, host=orch.config.listen_host, port=orch.config.listen_port)
