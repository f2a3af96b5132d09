"""Immutable bundle assembly and end-to-end verification.

A bundle is a content-addressed snapshot of the project source: the
manifest covers src/ (and the optional built PDF) plus the manifest
metadata itself; manifest.json and attestations/ sit outside the Merkle
root because the manifest cannot hash itself and attestations sign the
manifest. The bundle directory is named by its root and never mutated;
any change is a new bundle.
"""

from __future__ import annotations

import hashlib
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .canonical import now_timestamp, parse_timestamp
from .errors import SafetyRefusal, ValidationFailure
from .figsafe import RecheckReport, recheck_all
from .locks import project_lock
from .manifest import (
    MANIFEST_FILENAME,
    AuthorRecord,
    BuildPin,
    Manifest,
    ProvenanceRecord,
    canonical_encode,
    compute_bundle_root,
    parse_manifest,
    scan_tree,
    validate_manifest,
)
from .project import (
    IMPORT_LOG,
    author_key_path,
    load_metadata,
    parse_author_ref,
    save_metadata,
    validate_project,
)
from .signing import (
    CustodyEvidence,
    SidecarAttestation,
    SignerIdentity,
    sign_artifact,
    slugify,
    verify_attestation,
)

BUNDLE_EXCLUDES = (MANIFEST_FILENAME, "attestations/")
ATTESTATION_DIR = "attestations"
RELEASE_LOG = "release.log"


@dataclass
class Bundle:
    root_dir: Path
    manifest: Manifest
    attestations: list[SidecarAttestation] = field(default_factory=list)

    @property
    def bundle_root(self) -> str:
        return self.manifest.bundle_root


def append_release_log(project_root, action: str, *fields: str) -> None:
    out_dir = Path(project_root) / "out"
    out_dir.mkdir(exist_ok=True)
    line = "\t".join((now_timestamp(), action) + fields) + "\n"
    with open(out_dir / RELEASE_LOG, "a", encoding="utf-8") as handle:
        handle.write(line)


def _author_records(project_root, metadata) -> list[AuthorRecord]:
    records = []
    for ref in metadata.authors:
        name, kind, responsibility = parse_author_ref(ref)
        key_path = author_key_path(project_root, name)
        if not key_path.is_file():
            raise ValidationFailure(
                f"author key missing: keys/{key_path.name} (for {name!r})"
            )
        records.append(
            AuthorRecord(
                pubkey_pem=key_path.read_text(encoding="ascii"),
                claims=(f"name:{name}",),
                verified_credentials=(),
                role_kind=kind,
                role_responsibility=responsibility,
            )
        )
    return records


def _run_build(project_root, build_cmd: str, include_pdf: bool) -> tuple[BuildPin, bytes | None]:
    """Run the pinned build command in a scratch copy of src/."""
    argv = shlex.split(build_cmd)
    if not argv:
        raise ValidationFailure("empty build command")
    scratch = Path(tempfile.mkdtemp(prefix="clawxiv-build-"))
    try:
        shutil.copytree(project_root / "src", scratch / "src", symlinks=False)
        result = subprocess.run(
            argv, cwd=scratch / "src", capture_output=True, text=True
        )
        if result.returncode != 0:
            raise ValidationFailure(
                f"build command failed ({result.returncode}): "
                f"{result.stderr.strip() or result.stdout.strip()}"
            )
        pdf_bytes = None
        if include_pdf:
            pdfs = sorted((scratch / "src").rglob("*.pdf"))
            if not pdfs:
                raise ValidationFailure("build produced no PDF to include")
            pdf_bytes = pdfs[0].read_bytes()
        return BuildPin(engine=Path(argv[0]).name, cmd=build_cmd), pdf_bytes
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def bundle_create(
    project_root,
    include_pdf: bool = False,
    build_cmd: str | None = None,
    created_at: str | None = None,
    provider=None,
    container_digest: str = "",
) -> Bundle:
    """Assemble the project into a sealed bundle under out/bundles/.

    The created_at override exists solely so reproducibility checks can
    pin the timestamp; the default is the current time.
    """
    project_root = Path(project_root)
    if created_at is not None:
        parse_timestamp(created_at)
    if include_pdf and not build_cmd:
        raise ValidationFailure("include_pdf requires a build command")

    with project_lock(project_root):
        report = recheck_all(project_root, provider=provider)
        if report.blocking:
            blocked = ", ".join(e.path for e in report.entries if e.blocking)
            raise SafetyRefusal(f"safety re-check blocked publication of: {blocked}")

        violations = validate_project(project_root)
        if violations:
            raise ValidationFailure(
                "project validation failed: " + "; ".join(violations)
            )
        metadata = load_metadata(project_root)
        authors = _author_records(project_root, metadata)

        bundles_dir = project_root / "out" / "bundles"
        bundles_dir.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=bundles_dir))
        try:
            src_entries = scan_tree(project_root / "src")
            for entry in src_entries:
                source = project_root / "src" / entry.path
                target = staging / "src" / entry.path
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(source.read_bytes())

            if build_cmd:
                pin, pdf_bytes = _run_build(project_root, build_cmd, include_pdf)
                if container_digest:
                    pin = BuildPin(
                        engine=pin.engine,
                        container_digest=container_digest,
                        cmd=pin.cmd,
                    )
                if pdf_bytes is not None:
                    (staging / "paper.pdf").write_bytes(pdf_bytes)
            else:
                pin = BuildPin(engine="none", container_digest=container_digest, cmd="")

            provenance = []
            import_log = project_root / IMPORT_LOG
            if import_log.is_file():
                provenance.append(
                    ProvenanceRecord(
                        type="import_log",
                        hash=hashlib.sha256(import_log.read_bytes()).hexdigest(),
                    )
                )

            manifest = Manifest(
                manifest_version=1,
                created_at=created_at or now_timestamp(),
                files=scan_tree(staging),
                build=pin,
                authors=authors,
                provenance=provenance,
                licenses=list(metadata.licenses),
                tags_self=list(metadata.tags),
                tags_official_ref=[],
            )
            root = manifest.seal()
            (staging / MANIFEST_FILENAME).write_bytes(canonical_encode(manifest))

            final_dir = bundles_dir / root
            if final_dir.exists():
                # Deterministic recreate of an existing bundle.
                existing = (final_dir / MANIFEST_FILENAME).read_bytes()
                if existing != canonical_encode(manifest):
                    raise ValidationFailure(
                        f"bundle directory {root} exists with different contents"
                    )
                shutil.rmtree(staging)
            else:
                staging.rename(final_dir)
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise

        metadata.bundle_root = root
        save_metadata(project_root, metadata)
        append_release_log(
            project_root, "bundle-create", root, metadata.version_label.render()
        )
        return Bundle(root_dir=final_dir, manifest=manifest)


def sign_bundle(
    project_root,
    bundle_dir,
    signer: SignerIdentity,
    custody: CustodyEvidence | None = None,
    created_at: str | None = None,
) -> tuple[SidecarAttestation, Path]:
    """Attest the bundle: sign the manifest digest, publish the sidecar
    alongside the artifact (in the bundle and under out/attestations/)."""
    bundle_dir = Path(bundle_dir)
    manifest_path = bundle_dir / MANIFEST_FILENAME
    if not manifest_path.is_file():
        raise ValidationFailure(f"no {MANIFEST_FILENAME} in {bundle_dir}")
    attestation = sign_artifact(
        manifest_path.read_bytes(), signer, custody, created_at
    )
    filename = (
        f"{attestation.artifact_sha256[:8]}-{slugify(signer.display_name)}.json"
    )
    bundle_att_dir = bundle_dir / ATTESTATION_DIR
    bundle_att_dir.mkdir(exist_ok=True)
    (bundle_att_dir / filename).write_bytes(attestation.to_bytes())

    project_att_dir = Path(project_root) / "out" / ATTESTATION_DIR
    project_att_dir.mkdir(parents=True, exist_ok=True)
    path = project_att_dir / filename
    path.write_bytes(attestation.to_bytes())
    return attestation, path


def load_bundle_attestations(bundle_dir) -> list[tuple[Path, SidecarAttestation | None]]:
    """(path, attestation) pairs; None where a file fails to parse."""
    att_dir = Path(bundle_dir) / ATTESTATION_DIR
    if not att_dir.is_dir():
        return []
    out = []
    for path in sorted(att_dir.glob("*.json")):
        try:
            out.append((path, SidecarAttestation.from_bytes(path.read_bytes())))
        except ValidationFailure:
            out.append((path, None))
    return out


@dataclass
class BundleVerifyReport:
    hashes_ok: bool
    root_ok: bool
    signatures: str  # "ok" | "missing" | "invalid"
    safety_ok: bool
    problems: list[str] = field(default_factory=list)
    recheck: RecheckReport | None = None
    attestation_count: int = 0

    @property
    def passed(self) -> bool:
        """Integrity verdict: an unsigned but untampered bundle passes."""
        return (
            self.hashes_ok
            and self.root_ok
            and self.safety_ok
            and self.signatures != "invalid"
        )

    @property
    def promotable(self) -> bool:
        """Stricter verdict used by promotion and push gating."""
        return self.passed and self.signatures == "ok"

    def to_dict(self) -> dict:
        return {
            "hashes_ok": self.hashes_ok,
            "root_ok": self.root_ok,
            "signatures": self.signatures,
            "safety_ok": self.safety_ok,
            "passed": self.passed,
            "promotable": self.promotable,
            "problems": list(self.problems),
        }


def bundle_verify(bundle_dir, provider=None) -> BundleVerifyReport:
    """Recompute every hash and the root, verify attestations against the
    manifest bytes, and re-run the safety check."""
    bundle_dir = Path(bundle_dir)
    manifest_path = bundle_dir / MANIFEST_FILENAME
    if not manifest_path.is_file():
        raise ValidationFailure(f"no {MANIFEST_FILENAME} in {bundle_dir}")
    raw = manifest_path.read_bytes()
    problems: list[str] = []

    manifest = None
    try:
        manifest = parse_manifest(raw)
    except ValidationFailure as exc:
        problems.append(str(exc))

    hashes_ok = root_ok = False
    disk_entries = None
    if manifest is not None:
        if canonical_encode(manifest) != raw:
            problems.append(f"{MANIFEST_FILENAME}: not the canonical encoding")
        for violation in validate_manifest(manifest):
            problems.append(f"{MANIFEST_FILENAME}: {violation}")

        try:
            disk_entries = scan_tree(bundle_dir, exclusions=BUNDLE_EXCLUDES)
        except ValidationFailure as exc:
            problems.append(str(exc))
    if manifest is not None and disk_entries is not None:
        disk_by_path = {entry.path: entry for entry in disk_entries}
        manifest_by_path = {entry.path: entry for entry in manifest.files}
        hashes_ok = True
        for path, entry in manifest_by_path.items():
            on_disk = disk_by_path.get(path)
            if on_disk is None:
                problems.append(f"{path}: listed in manifest but missing on disk")
                hashes_ok = False
            elif on_disk.sha256 != entry.sha256 or on_disk.size != entry.size:
                problems.append(f"{path}: hash mismatch against manifest")
                hashes_ok = False
        for path in disk_by_path:
            if path not in manifest_by_path:
                problems.append(f"{path}: present on disk but not in manifest")
                hashes_ok = False

        recomputed = compute_bundle_root(disk_entries, manifest.metadata_dict())
        root_ok = recomputed.hex() == manifest.bundle_root
        if not root_ok:
            problems.append("root: recomputed bundle root does not match manifest")

    attestations = load_bundle_attestations(bundle_dir)
    if not attestations:
        signatures = "missing"
        problems.append("attestations: none present")
    else:
        signatures = "ok"
        for path, attestation in attestations:
            if attestation is None:
                signatures = "invalid"
                problems.append(f"{path.name}: unparseable attestation")
                continue
            result = verify_attestation(raw, attestation)
            if not result:
                signatures = "invalid"
                problems.append(f"{path.name}: {result.reason}")

    recheck = recheck_all(bundle_dir, provider=provider)
    safety_ok = not recheck.blocking
    for entry in recheck.entries:
        if entry.blocking:
            problems.append(f"{entry.path}: safety re-check blocking")

    return BundleVerifyReport(
        hashes_ok=hashes_ok,
        root_ok=root_ok,
        signatures=signatures,
        safety_ok=safety_ok,
        problems=problems,
        recheck=recheck,
        attestation_count=len(attestations),
    )
