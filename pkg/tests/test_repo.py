from __future__ import annotations

import hashlib
import os
import random
import stat
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridops.errors import (
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
from gridops.repo import (
    Bundle,
    BundleVerdict,
    PackageDescriptor,
    ReleaseState,
    Repository,
    backup_release,
    build_bundle,
    cut_release,
    fetch,
    parse_bundle_payload,
    sync_mirror,
    verify_bundle,
)

from .conftest import sample_release


def oracle_payload(files: list[tuple[str, int, bytes]]) -> bytes:
    """Independent re-implementation of the bundle byte format."""
    out = b"GOB1" + struct.pack(">I", len(files))
    for path, mode, content in sorted(files, key=lambda f: f[0]):
        raw = path.encode("utf-8")
        out += struct.pack(">I", len(raw)) + raw
        out += struct.pack(">I", mode)
        out += struct.pack(">Q", len(content)) + content
    return out


class TestBundles:
    def test_digest_matches_independent_oracle(self):
        files = [("b.txt", 0o644, b"y"), ("a.txt", 0o644, b"x")]
        bundle = build_bundle(files)
        assert bundle.digest == hashlib.sha256(oracle_payload(files)).hexdigest()

    def test_permutation_invariance(self):
        files = [("a.txt", 0o644, b"x"), ("b.txt", 0o644, b"y")]
        assert build_bundle(files).digest == build_bundle(list(reversed(files))).digest

    def test_empty_bundle(self):
        bundle = build_bundle([])
        assert bundle.entries == ()
        assert bundle.digest == hashlib.sha256(b"GOB1" + struct.pack(">I", 0)).hexdigest()

    def test_path_traversal_rejected(self):
        with pytest.raises(PathTraversal):
            build_bundle([("../x", 0o644, b"")])
        with pytest.raises(PathTraversal):
            build_bundle([("/etc/passwd", 0o644, b"")])
        with pytest.raises(PathTraversal):
            build_bundle([("a/./b", 0o644, b"")])

    def test_duplicate_paths_rejected(self):
        with pytest.raises(DuplicatePath):
            build_bundle([("a", 0o644, b"1"), ("a", 0o755, b"2")])

    def test_verify_untouched_is_ok(self):
        bundle = build_bundle([("a", 0o644, b"data")])
        assert verify_bundle(bundle) is BundleVerdict.OK

    def test_verify_flipped_byte_is_corrupt(self):
        bundle = build_bundle([("a", 0o644, b"data")])
        tampered = bytearray(bundle.payload)
        tampered[-1] ^= 0x01
        assert hashlib.sha256(bytes(tampered)).hexdigest() != bundle.digest
        corrupt = Bundle(digest=bundle.digest, entries=bundle.entries, payload=bytes(tampered))
        assert verify_bundle(corrupt) is BundleVerdict.CORRUPT

    def test_verify_truncated_is_corrupt(self):
        bundle = build_bundle([("a", 0o644, b"data")])
        corrupt = Bundle(digest=bundle.digest, entries=bundle.entries, payload=bundle.payload[:-2])
        assert verify_bundle(corrupt) is BundleVerdict.CORRUPT

    def test_payload_round_trip(self):
        files = [("bin/tool", 0o755, b"\x00\x01"), ("doc/readme", 0o644, b"hello")]
        bundle = build_bundle(files)
        rebuilt = parse_bundle_payload(bundle.payload)
        assert rebuilt.digest == bundle.digest
        assert rebuilt.entries == bundle.entries
        # rebuilding from the decoded entries is also digest-identical
        again = build_bundle([(e.path, e.mode, e.content) for e in rebuilt.entries])
        assert again.digest == bundle.digest

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.text(
                    alphabet=st.sampled_from("abcdefgh123_"), min_size=1, max_size=8
                ).map(lambda s: f"dir/{s}"),
                st.sampled_from([0o644, 0o755]),
                st.binary(max_size=64),
            ),
            max_size=8,
            unique_by=lambda f: f[0],
        ),
        st.randoms(),
    )
    def test_digest_stable_under_shuffle(self, files, rng):
        shuffled = list(files)
        rng.shuffle(shuffled)
        assert build_bundle(files).digest == build_bundle(shuffled).digest


class TestManifests:
    def test_cut_release_happy_path(self):
        manifest, _ = sample_release()
        assert manifest.state is ReleaseState.RELEASED
        assert len(manifest.packages) == 2
        assert manifest.verify_digest()

    def test_cut_release_digest_oracle(self):
        import json

        manifest, _ = sample_release()
        basis = {
            "project": manifest.project,
            "version": manifest.version,
            "architectures": list(manifest.architectures),
            "packages": [p.to_dict() for p in manifest.packages],
        }
        expected = hashlib.sha256(
            json.dumps(basis, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()
        assert manifest.manifest_digest == expected

    def test_cut_twice_is_deterministic(self):
        a, _ = sample_release()
        b, _ = sample_release()
        assert a.manifest_digest == b.manifest_digest

    def test_empty_release_rejected(self):
        with pytest.raises(EmptyRelease):
            cut_release("CMSSW", "1_0_0", [])

    def test_dangling_dependency_rejected(self):
        bundle = build_bundle([("f", 0o644, b"x")])
        pkg = PackageDescriptor("core", "1", bundle.digest, 1, depends=("missing",))
        with pytest.raises(DanglingDependency):
            cut_release("CMSSW", "1_0_0", [pkg])

    def test_duplicate_package_rejected(self):
        bundle = build_bundle([("f", 0o644, b"x")])
        pkg = PackageDescriptor("core", "1", bundle.digest, 1)
        with pytest.raises(DuplicatePackage):
            cut_release("CMSSW", "1_0_0", [pkg, pkg])

    def test_empty_identifiers_rejected(self):
        bundle = build_bundle([("f", 0o644, b"x")])
        pkg = PackageDescriptor("core", "1", bundle.digest, 1)
        with pytest.raises(BadIdentifier):
            cut_release("", "1_0_0", [pkg])
        with pytest.raises(BadIdentifier):
            cut_release("CMSSW", "", [pkg])

    def test_self_dependency_rejected(self):
        bundle = build_bundle([("f", 0o644, b"x")])
        with pytest.raises(DanglingDependency):
            PackageDescriptor("core", "1", bundle.digest, 1, depends=("core",))

    def test_state_transitions(self):
        manifest, _ = sample_release()
        validated = manifest.with_state(ReleaseState.VALIDATED)
        archived = validated.with_state(ReleaseState.ARCHIVED)
        assert archived.state is ReleaseState.ARCHIVED
        assert archived.with_state(ReleaseState.DEPRECATED).state is ReleaseState.DEPRECATED
        with pytest.raises(IllegalStateChange):
            manifest.with_state(ReleaseState.ARCHIVED)
        with pytest.raises(IllegalStateChange):
            archived.with_state(ReleaseState.RELEASED)
        # digest is independent of lifecycle state
        assert validated.manifest_digest == manifest.manifest_digest


class TestRepository:
    def test_publish_increments_generation_and_announces(self, tmp_path):
        repo = Repository(tmp_path / "repo")
        manifest, bundles = sample_release()
        assert repo.generation == 0
        announcement = repo.publish_release(manifest, bundles, at=42)
        assert repo.generation == 1
        assert announcement.release == "CMSSW/1_0_0"
        assert [a.to_dict() for a in repo.announcements()] == [{"release": "CMSSW/1_0_0", "at": 42}]
        assert (tmp_path / "repo" / "announcements.log").read_text().count("\n") == 1
        fetched = repo.bundle_payload(bundles[0].digest)
        assert fetched == bundles[0].payload

    def test_publish_digest_mismatch_leaves_index_unchanged(self, tmp_path):
        repo = Repository(tmp_path / "repo")
        manifest, bundles = sample_release()
        with pytest.raises(DigestMismatch):
            repo.publish_release(manifest, bundles[:1], at=0)
        assert repo.generation == 0
        assert repo.release_keys() == []

    def test_republish_rejected(self, tmp_path):
        repo = Repository(tmp_path / "repo")
        manifest, bundles = sample_release()
        repo.publish_release(manifest, bundles, at=0)
        with pytest.raises(AlreadyPublished):
            repo.publish_release(manifest, bundles, at=1)
        assert repo.generation == 1

    def test_draft_release_not_publishable(self, tmp_path):
        from dataclasses import replace

        repo = Repository(tmp_path / "repo")
        manifest, bundles = sample_release()
        draft = replace(manifest, state=ReleaseState.DRAFT)
        with pytest.raises(IllegalStateChange):
            repo.publish_release(draft, bundles, at=0)

    def test_index_survives_reopen(self, tmp_path):
        manifest, bundles = sample_release()
        repo = Repository(tmp_path / "repo")
        repo.publish_release(manifest, bundles, at=7)
        reopened = Repository(tmp_path / "repo")
        assert reopened.generation == 1
        assert reopened.release_keys() == ["CMSSW/1_0_0"]
        assert reopened.manifest("CMSSW", "1_0_0").manifest_digest == manifest.manifest_digest

    def test_match_payload(self, tmp_path):
        repo = Repository(tmp_path / "repo")
        manifest, bundles = sample_release()
        repo.publish_release(manifest, bundles, at=0)
        assert repo.match_payload("CMSSW_1_0_0") == ("CMSSW", "1_0_0")
        assert repo.match_payload("CMSSW_9_9_9") is None


class TestBackup:
    def test_backup_copies_byte_identical(self, tmp_path):
        repo = Repository(tmp_path / "repo")
        manifest, bundles = sample_release()
        repo.publish_release(manifest, bundles, at=0)
        record = backup_release(repo, "CMSSW", "1_0_0", tmp_path / "cold")
        assert sorted(record.digests) == sorted(b.digest for b in bundles)
        for bundle in bundles:
            copied = (tmp_path / "cold" / "bundles" / bundle.digest).read_bytes()
            assert hashlib.sha256(copied).hexdigest() == bundle.digest

    def test_backup_idempotent(self, tmp_path):
        repo = Repository(tmp_path / "repo")
        manifest, bundles = sample_release()
        repo.publish_release(manifest, bundles, at=0)
        first = backup_release(repo, "CMSSW", "1_0_0", tmp_path / "cold")
        second = backup_release(repo, "CMSSW", "1_0_0", tmp_path / "cold")
        assert first.to_dict() == second.to_dict()
        records = list((tmp_path / "cold" / "releases").iterdir())
        assert len(records) == 1

    def test_backup_unwritable_coldstore(self, tmp_path):
        repo = Repository(tmp_path / "repo")
        manifest, bundles = sample_release()
        repo.publish_release(manifest, bundles, at=0)
        # a plain file where the cold-store directory should be
        cold = tmp_path / "cold"
        cold.write_text("not a directory")
        with pytest.raises(StorageFailure):
            backup_release(repo, "CMSSW", "1_0_0", cold)
        cold.unlink()
        cold.mkdir()
        os.chmod(cold, stat.S_IRUSR | stat.S_IXUSR)
        try:
            if not os.access(cold, os.W_OK):
                with pytest.raises(StorageFailure):
                    backup_release(repo, "CMSSW", "1_0_0", cold)
        finally:
            os.chmod(cold, 0o755)

    def test_backup_write_once_conflict(self, tmp_path):
        repo = Repository(tmp_path / "repo")
        manifest, bundles = sample_release()
        repo.publish_release(manifest, bundles, at=0)
        cold = tmp_path / "cold"
        (cold / "bundles").mkdir(parents=True)
        (cold / "bundles" / bundles[0].digest).write_bytes(b"changed")
        with pytest.raises(StorageFailure):
            backup_release(repo, "CMSSW", "1_0_0", cold)


class TestMirror:
    def test_full_copy_into_empty_mirror(self, tmp_path):
        primary = Repository(tmp_path / "primary")
        mirror = Repository(tmp_path / "mirror")
        for version in ("1_0_0", "1_0_1"):
            manifest, bundles = sample_release(version=version)
            primary.publish_release(manifest, bundles, at=0)
        delta = sync_mirror(primary, mirror)
        assert delta.transferred_releases == ["CMSSW/1_0_0", "CMSSW/1_0_1"]
        assert mirror.release_keys() == primary.release_keys()
        assert mirror.generation == primary.generation
        assert mirror.all_bundle_digests() == primary.all_bundle_digests()

    def test_synced_mirror_is_fixed_point(self, tmp_path):
        primary = Repository(tmp_path / "primary")
        mirror = Repository(tmp_path / "mirror")
        manifest, bundles = sample_release()
        primary.publish_release(manifest, bundles, at=0)
        sync_mirror(primary, mirror)
        delta = sync_mirror(primary, mirror)
        assert delta.empty

    def test_mirror_ahead_refused(self, tmp_path):
        primary = Repository(tmp_path / "primary")
        mirror = Repository(tmp_path / "mirror")
        manifest, bundles = sample_release()
        mirror.publish_release(manifest, bundles, at=0)
        with pytest.raises(MirrorAhead):
            sync_mirror(primary, mirror)

    def test_mirror_digest_sets_equal_after_sync(self, tmp_path):
        primary = Repository(tmp_path / "primary")
        mirror = Repository(tmp_path / "mirror")
        manifest, bundles = sample_release()
        primary.publish_release(manifest, bundles, at=0)
        sync_mirror(primary, mirror)
        for digest in primary.all_bundle_digests():
            assert (
                hashlib.sha256(mirror.bundle_payload(digest)).hexdigest()
                == hashlib.sha256(primary.bundle_payload(digest)).hexdigest()
            )


class TestFetch:
    def _published_pair(self, tmp_path):
        primary = Repository(tmp_path / "primary")
        mirror = Repository(tmp_path / "mirror")
        manifest, bundles = sample_release()
        primary.publish_release(manifest, bundles, at=0)
        return primary, mirror, manifest, bundles

    def test_prefers_first_source(self, tmp_path):
        primary, mirror, manifest, bundles = self._published_pair(tmp_path)
        sync_mirror(primary, mirror)
        marker = tmp_path / "primary-read.marker"
        original = primary.bundle_payload

        def tracking(digest):
            marker.touch()
            return original(digest)

        primary.bundle_payload = tracking  # type: ignore[method-assign]
        result = fetch(("CMSSW", "1_0_0"), [mirror, primary])
        assert set(result) == {b.digest for b in bundles}
        assert not marker.exists()

    def test_primary_only(self, tmp_path):
        primary, mirror, manifest, bundles = self._published_pair(tmp_path)
        result = fetch(("CMSSW", "1_0_0"), [mirror, primary])
        assert set(result) == {b.digest for b in bundles}

    def test_corrupted_mirror_falls_through(self, tmp_path):
        primary, mirror, manifest, bundles = self._published_pair(tmp_path)
        sync_mirror(primary, mirror)
        victim = mirror.bundles_dir / bundles[0].digest
        victim.write_bytes(b"corrupted" + victim.read_bytes()[9:])
        result = fetch(("CMSSW", "1_0_0"), [mirror, primary])
        for digest, bundle in result.items():
            assert hashlib.sha256(bundle.payload).hexdigest() == digest

    def test_not_found(self, tmp_path):
        primary = Repository(tmp_path / "primary")
        with pytest.raises(NotFound):
            fetch(("CMSSW", "1_0_0"), [primary])

    def test_all_sources_corrupt(self, tmp_path):
        primary, mirror, manifest, bundles = self._published_pair(tmp_path)
        victim = primary.bundles_dir / bundles[0].digest
        victim.write_bytes(b"corrupted" + victim.read_bytes()[9:])
        with pytest.raises(DigestMismatch):
            fetch(("CMSSW", "1_0_0"), [primary])


def test_permutation_invariance_over_random_file_sets():
    rng = random.Random(20260809)
    for _ in range(20):
        n = rng.randint(0, 12)
        files = []
        used = set()
        for _ in range(n):
            path = f"d{rng.randint(0, 3)}/f{rng.randint(0, 999)}"
            if path in used:
                continue
            used.add(path)
            files.append((path, rng.choice([0o644, 0o755]), os.urandom(rng.randint(0, 32))))
        shuffled = list(files)
        rng.shuffle(shuffled)
        assert build_bundle(files).digest == build_bundle(shuffled).digest
