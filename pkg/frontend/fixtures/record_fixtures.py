#!/usr/bin/env python3
"""Record gate API responses into JSON fixtures for the console tests.

Drives a small campaign against an in-process gate (three sites, two
releases, one broken site) and saves the exact wire bodies the console
consumes. Re-run from the repository root after API changes:

    python3 frontend/fixtures/record_fixtures.py
"""

from __future__ import annotations

import base64
import json
import tempfile
from pathlib import Path

from starlette.testclient import TestClient

from gridops.authz import Role
from gridops.config import GateConfig
from gridops.gate import build_app
from gridops.harness import Fault, FaultKind
from gridops.service import Orchestrator
from gridops.repo import PackageDescriptor, build_bundle, cut_release

FIXTURES = Path(__file__).resolve().parent
SITES = ["site-alpha", "site-beta", "site-gamma"]


def save(name: str, status_code: int, body: dict) -> None:
    doc = {"status": status_code, "body": body}
    (FIXTURES / name).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"recorded {name} ({status_code})")


def release_body(version: str) -> dict:
    core = build_bundle(
        [("bin/run", 0o755, b"#!/bin/sh\necho run\n"), ("lib/core.so", 0o644, b"\x7fELF")]
    )
    extras = build_bundle([("share/data.txt", 0o644, f"CMSSW {version}\n")])
    packages = [
        PackageDescriptor("core", version, core.digest, len(core.payload)),
        PackageDescriptor("extras", version, extras.digest, len(extras.payload), depends=("core",)),
    ]
    manifest = cut_release("CMSSW", version, packages)
    return {
        "manifest": manifest.to_dict(),
        "bundles": [base64.b64encode(b.payload).decode() for b in (core, extras)],
    }


def main() -> None:
    root = Path(tempfile.mkdtemp(prefix="gridops-fixtures-"))
    (root / "trust.key").write_bytes(b"fixture-recording-trust-key")
    (root / "fleet.json").write_text(
        json.dumps(
            {
                "sites": [
                    {"id": site, "architecture": "slc3_ia32", "rng_seed": 11 + i}
                    for i, site in enumerate(SITES)
                ]
            }
        )
    )
    orch = Orchestrator(
        GateConfig(
            state_dir=str(root / "state"),
            repo_root=str(root / "repo"),
            trust_key_file=str(root / "trust.key"),
            fleet_file=str(root / "fleet.json"),
            ledger_fsync=False,
            test_mode=True,
        )
    )
    client = TestClient(build_app(orch))
    esm = {"Authorization": f"Bearer {orch.mint_token('console-esm', Role.ESM)}"}
    user = {"Authorization": f"Bearer {orch.mint_token('console-user', Role.USER)}"}

    for version in ("1_0_0", "1_1_0"):
        assert client.post("/releases", json=release_body(version), headers=esm).status_code == 201

    def submit(site: str, version: str, headers: dict):
        return client.post(
            "/jobs",
            json={"site": site, "project": "CMSSW", "version": version},
            headers=headers,
        )

    # broken site: install abandons, monitoring keeps flagging the area
    orch.fleet.inject("site-gamma", Fault(kind=FaultKind.PERM_DENIED))

    assert submit("site-alpha", "1_0_0", esm).status_code == 201
    assert submit("site-beta", "1_0_0", esm).status_code == 201
    assert submit("site-gamma", "1_0_0", esm).status_code == 201
    orch.watch.cycle()  # drives all three to terminal states, probes the fleet

    # transient corruption on site-beta: opens a ticket, then recovers
    orch.fleet.inject("site-beta", Fault(kind=FaultKind.PKGDB_CORRUPT))
    orch.watch.cycle()
    orch.fleet.clear("site-beta", FaultKind.PKGDB_CORRUPT)
    orch.watch.cycle()

    # second release: published on alpha, in flight on beta
    assert submit("site-alpha", "1_1_0", esm).status_code == 201
    orch.watch.cycle()
    response = submit("site-beta", "1_1_0", esm)
    save("submit_ok.json", response.status_code, response.json())

    response = submit("site-beta", "1_1_0", esm)
    save("submit_duplicate.json", response.status_code, response.json())

    response = submit("site-gamma", "1_1_0", user)
    save("submit_unauthorized.json", response.status_code, response.json())

    response = client.get("/status")
    save("status.json", response.status_code, response.json())
    response = client.get("/releases")
    save("releases.json", response.status_code, response.json())
    response = client.get("/tickets")
    save("tickets.json", response.status_code, response.json())
    response = client.get("/sites/site-alpha/history?last=10")
    save("history_site-alpha.json", response.status_code, response.json())

    open_warning = next(
        t for t in client.get("/tickets").json()["tickets"] if t["state"] != "CLOSED"
        and t["origin"].startswith("site-gamma:")
    )
    response = client.post(f"/tickets/{open_warning['ticket_id']}/close", headers=esm)
    save("ticket_close_ok.json", response.status_code, response.json())
    response = client.post(f"/tickets/{open_warning['ticket_id']}/close", headers=esm)
    save("ticket_close_illegal.json", response.status_code, response.json())

    orch.close()


if __name__ == "__main__":
    main()
