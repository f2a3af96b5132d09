from __future__ import annotations

import json

import pytest

from clawxiv import bundle as bd
from clawxiv.errors import SafetyRefusal, ValidationFailure
from clawxiv.manifest import parse_manifest
from clawxiv.project import load_metadata
from clawxiv.signing import CustodyEvidence, SignerIdentity

from conftest import make_image, snapshot_tree

PINNED = "2026-04-02T09:30:00Z"
ADA = SignerIdentity(kind="human", display_name="Ada Lovelace")


def test_minimal_bundle_one_file_plus_metadata_leaf(tmp_path, project_dir):
    # strip the project down to a single source file
    (project_dir.src_dir / "refs.bib").unlink()
    created = bd.bundle_create(project_dir.root, created_at=PINNED)
    manifest = parse_manifest(
        (created.root_dir / "manifest.json").read_bytes()
    )
    assert [e.path for e in manifest.files] == ["src/main.tex"]
    assert manifest.bundle_root == created.bundle_root
    assert created.root_dir.name == created.bundle_root


def test_recreate_with_pinned_timestamp_is_bit_identical(project_dir):
    first = bd.bundle_create(project_dir.root, created_at=PINNED)
    manifest_bytes = (first.root_dir / "manifest.json").read_bytes()
    second = bd.bundle_create(project_dir.root, created_at=PINNED)
    assert second.bundle_root == first.bundle_root
    assert (second.root_dir / "manifest.json").read_bytes() == manifest_bytes


def test_create_records_root_and_release_log(project_dir):
    created = bd.bundle_create(project_dir.root, created_at=PINNED)
    assert load_metadata(project_dir.root).bundle_root == created.bundle_root
    release_log = (project_dir.out_dir / "release.log").read_text()
    assert created.bundle_root in release_log
    assert "bundle-create" in release_log


def test_blocking_figure_aborts_with_no_bundle_dir(project_dir):
    make_image(project_dir.fig_dir / "photo.png", 640, 480)
    # sidecar present so project validation passes; safety still blocks
    (project_dir.fig_dir / "photo.json").write_text("{}")
    with pytest.raises(SafetyRefusal):
        bd.bundle_create(project_dir.root, created_at=PINNED)
    bundles = project_dir.out_dir / "bundles"
    assert not bundles.exists() or list(bundles.iterdir()) == []


def test_invalid_project_refused(tmp_path):
    (tmp_path / "src").mkdir()
    with pytest.raises(ValidationFailure, match="validation"):
        bd.bundle_create(tmp_path)


def test_missing_author_key_refused(project_dir):
    (project_dir.keys_dir / "ada-lovelace.pem").unlink()
    with pytest.raises(ValidationFailure, match="author key"):
        bd.bundle_create(project_dir.root, created_at=PINNED)


def test_build_cmd_runs_and_pins_engine(project_dir):
    cmd = (
        "python3 -c \"open('paper.pdf','wb').write(b'%PDF-1.4 deterministic')\""
    )
    created = bd.bundle_create(
        project_dir.root, include_pdf=True, build_cmd=cmd, created_at=PINNED
    )
    manifest = parse_manifest((created.root_dir / "manifest.json").read_bytes())
    assert manifest.build.engine == "python3"
    assert manifest.build.cmd == cmd
    assert (created.root_dir / "paper.pdf").read_bytes() == b"%PDF-1.4 deterministic"
    assert any(e.path == "paper.pdf" for e in manifest.files)


def test_failing_build_aborts_and_cleans_up(project_dir):
    with pytest.raises(ValidationFailure, match="build command failed"):
        bd.bundle_create(
            project_dir.root,
            build_cmd="python3 -c \"raise SystemExit(9)\"",
            created_at=PINNED,
        )
    bundles = project_dir.out_dir / "bundles"
    assert not bundles.exists() or list(bundles.iterdir()) == []


def test_include_pdf_requires_build_cmd(project_dir):
    with pytest.raises(ValidationFailure, match="include_pdf"):
        bd.bundle_create(project_dir.root, include_pdf=True)


def test_import_log_lands_in_provenance(project_dir):
    created = bd.bundle_create(project_dir.root, created_at=PINNED)
    manifest = parse_manifest((created.root_dir / "manifest.json").read_bytes())
    assert [p.type for p in manifest.provenance] == ["import_log"]
    import hashlib

    expected = hashlib.sha256(
        (project_dir.root / "import.log").read_bytes()
    ).hexdigest()
    assert manifest.provenance[0].hash == expected


def test_authors_carried_into_manifest(project_dir):
    created = bd.bundle_create(project_dir.root, created_at=PINNED)
    manifest = parse_manifest((created.root_dir / "manifest.json").read_bytes())
    assert len(manifest.authors) == 1
    author = manifest.authors[0]
    assert author.display_name() == "Ada Lovelace"
    assert author.role_kind == "human"
    assert author.role_responsibility == "corresponding"
    assert "BEGIN PUBLIC KEY" in author.pubkey_pem


# --- sign_bundle -------------------------------------------------------------------

def test_sign_bundle_writes_sidecars_both_places(project_dir):
    created = bd.bundle_create(project_dir.root, created_at=PINNED)
    attestation, path = bd.sign_bundle(
        project_dir.root, created.root_dir, ADA,
        custody=CustodyEvidence(machine_id="m-77"),
    )
    prefix = attestation.artifact_sha256[:8]
    assert path.name == f"{prefix}-ada-lovelace.json"
    assert (created.root_dir / "attestations" / path.name).is_file()
    assert (project_dir.out_dir / "attestations" / path.name).is_file()
    record = json.loads(path.read_bytes())
    assert record["custody"]["machine_id"] == "m-77"


# --- bundle_verify ------------------------------------------------------------------

def _signed_bundle(project_dir):
    created = bd.bundle_create(project_dir.root, created_at=PINNED)
    bd.sign_bundle(project_dir.root, created.root_dir, ADA)
    return created


def test_fresh_signed_bundle_all_ok(project_dir):
    created = _signed_bundle(project_dir)
    report = bd.bundle_verify(created.root_dir)
    assert report.hashes_ok and report.root_ok and report.safety_ok
    assert report.signatures == "ok"
    assert report.passed and report.promotable
    assert report.problems == []


def test_unsigned_bundle_passes_but_not_promotable(project_dir):
    created = bd.bundle_create(project_dir.root, created_at=PINNED)
    report = bd.bundle_verify(created.root_dir)
    assert report.passed
    assert report.signatures == "missing"
    assert not report.promotable


def test_payload_flip_fails_hash_and_root(project_dir):
    created = _signed_bundle(project_dir)
    victim = created.root_dir / "src" / "main.tex"
    data = bytearray(victim.read_bytes())
    data[0] ^= 0x01
    victim.write_bytes(bytes(data))
    report = bd.bundle_verify(created.root_dir)
    assert not report.hashes_ok
    assert not report.root_ok
    assert not report.passed
    assert any("src/main.tex" in p for p in report.problems)


def test_extra_file_detected(project_dir):
    created = _signed_bundle(project_dir)
    (created.root_dir / "src" / "smuggled.txt").write_text("extra")
    report = bd.bundle_verify(created.root_dir)
    assert not report.passed
    assert any("smuggled" in p for p in report.problems)


def test_deleted_attestation_blocks_promotion_only(project_dir):
    created = _signed_bundle(project_dir)
    for attestation in (created.root_dir / "attestations").glob("*.json"):
        attestation.unlink()
    report = bd.bundle_verify(created.root_dir)
    assert report.signatures == "missing"
    assert report.passed
    assert not report.promotable


def test_corrupted_attestation_fails_overall(project_dir):
    created = _signed_bundle(project_dir)
    target = next((created.root_dir / "attestations").glob("*.json"))
    record = json.loads(target.read_bytes())
    record["signature"] = "AAAA" + record["signature"][4:]
    target.write_text(json.dumps(record))
    report = bd.bundle_verify(created.root_dir)
    assert report.signatures == "invalid"
    assert not report.passed


def test_manifest_byte_flip_detected(project_dir):
    created = _signed_bundle(project_dir)
    manifest_path = created.root_dir / "manifest.json"
    data = bytearray(manifest_path.read_bytes())
    data[len(data) // 2] ^= 0x02
    manifest_path.write_bytes(bytes(data))
    report = bd.bundle_verify(created.root_dir)
    assert not report.passed
    assert report.problems


def test_symlink_smuggled_into_bundle_fails_report(project_dir):
    import os

    created = _signed_bundle(project_dir)
    os.symlink(
        created.root_dir / "src" / "main.tex",
        created.root_dir / "src" / "sneaky-link.tex",
    )
    report = bd.bundle_verify(created.root_dir)
    assert not report.passed
    assert any("symlink" in p for p in report.problems)


def test_missing_manifest_is_an_error(tmp_path):
    with pytest.raises(ValidationFailure, match="manifest.json"):
        bd.bundle_verify(tmp_path)


def test_photographic_dropped_into_bundle_blocks_safety(project_dir):
    created = _signed_bundle(project_dir)
    make_image(created.root_dir / "src" / "fig" / "late.png", 640, 480)
    report = bd.bundle_verify(created.root_dir)
    assert not report.safety_ok
    assert not report.passed


def test_create_then_verify_round_trip_unmodified(project_dir):
    created = _signed_bundle(project_dir)
    before = snapshot_tree(created.root_dir)
    report = bd.bundle_verify(created.root_dir)
    assert report.passed
    assert snapshot_tree(created.root_dir) == before  # verify is read-only
