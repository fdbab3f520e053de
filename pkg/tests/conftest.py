from __future__ import annotations

import json
from pathlib import Path

import pytest

from gridops.authz import Role
from gridops.config import GateConfig
from gridops.repo import Bundle, PackageDescriptor, ReleaseManifest, build_bundle, cut_release
from gridops.service import Orchestrator

TRUST_KEY = b"unit-test-trust-key-0123456789"


def write_fleet_file(path: Path, site_ids: list[str], *, arch: str = "slc3_ia32", seed_base: int = 100) -> Path:
    doc = {
        "sites": [
            {"id": site_id, "architecture": arch, "rng_seed": seed_base + i}
            for i, site_id in enumerate(site_ids)
        ]
    }
    path.write_text(json.dumps(doc), "utf-8")
    return path


def sample_release(project: str = "CMSSW", version: str = "1_0_0") -> tuple[ReleaseManifest, list[Bundle]]:
    """A two-package release with one dependency edge."""
    core = build_bundle(
        [
            ("bin/run", 0o755, b"#!/bin/sh\necho run\n"),
            ("lib/core.so", 0o644, b"\x7fELF-core"),
        ]
    )
    extras = build_bundle([("share/data.txt", 0o644, f"{project} {version}\n")])
    packages = [
        PackageDescriptor("core", version, core.digest, len(core.payload)),
        PackageDescriptor("extras", version, extras.digest, len(extras.payload), depends=("core",)),
    ]
    manifest = cut_release(project, version, packages)
    return manifest, [core, extras]


@pytest.fixture
def make_orchestrator(tmp_path):
    built: list[Orchestrator] = []
    counter = {"n": 0}

    def build(
        site_ids: list[str] | None = None,
        *,
        mirror: bool = True,
        max_retries: int = 3,
        validation_jobs: int = 3,
        backoff_base_ms: int = 10,
        seed_base: int = 100,
        dteam_write: bool = False,
        ledger_fsync: bool = False,
    ) -> Orchestrator:
        counter["n"] += 1
        root = tmp_path / f"sys{counter['n']}"
        root.mkdir()
        key_file = root / "trust.key"
        key_file.write_bytes(TRUST_KEY)
        fleet_file = write_fleet_file(
            root / "fleet.json", site_ids if site_ids is not None else ["site-a"], seed_base=seed_base
        )
        config = GateConfig(
            state_dir=str(root / "state"),
            repo_root=str(root / "repo"),
            trust_key_file=str(key_file),
            fleet_file=str(fleet_file),
            mirror_root=str(root / "mirror") if mirror else None,
            max_retries=max_retries,
            validation_jobs=validation_jobs,
            backoff_base_ms=backoff_base_ms,
            dteam_write=dteam_write,
            ledger_fsync=ledger_fsync,
            test_mode=True,
        )
        orch = Orchestrator(config)
        built.append(orch)
        return orch

    yield build
    for orch in built:
        orch.close()


@pytest.fixture
def orch(make_orchestrator) -> Orchestrator:
    return make_orchestrator(["site-a", "site-b"])


@pytest.fixture
def esm(orch):
    return orch.authz.authenticate(orch.mint_token("esm-op", Role.ESM))


@pytest.fixture
def dteam(orch):
    return orch.authz.authenticate(orch.mint_token("sft-runner", Role.DTEAM))


@pytest.fixture
def user(orch):
    return orch.authz.authenticate(orch.mint_token("grid-user", Role.USER))


def publish_sample(orch: Orchestrator, project: str = "CMSSW", version: str = "1_0_0"):
    manifest, bundles = sample_release(project, version)
    orch.repository.publish_release(manifest, bundles, at=orch.clock.now_ms())
    return manifest, bundles
