"""Gated publication push and content-addressed retrieval.

All gates (version label, safety re-check, verification, admission) run
before any target is touched; once transmission starts, per-target
failures are recorded as failed receipts and remaining targets are still
attempted. Gateways receive the bundle as a deterministic uncompressed
tar (entries sorted by path, zeroed timestamps and ownership) so the same
bundle always uploads as the same bytes.
"""

from __future__ import annotations

import io
import logging
import os
import shutil
import tarfile
from dataclasses import dataclass
from pathlib import Path

import requests

from .antispam import AdmissionEvidence, AdmissionPolicy, admissible
from .bundle import BUNDLE_EXCLUDES, append_release_log, bundle_verify
from .canonical import now_timestamp
from .errors import GateFailure, SafetyRefusal, TransmitFailure, ValidationFailure
from .figsafe import recheck_all
from .locks import project_lock
from .manifest import MANIFEST_FILENAME, compute_bundle_root, parse_manifest, scan_tree
from .project import PROJECT_FILE, load_metadata, record_publication_ids
from .signing import generate_private_key
from .translog import make_entry, project_log

PUSH_TARGETS_ENV = "CLAWXIV_PUSH_TARGETS"
_HTTP_TIMEOUT = 30

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PushTarget:
    kind: str  # "local_mirror" or "gateway"
    location: str  # directory path or base URL
    gateway_flavor: str = ""  # "swarm_like" or "ipfs_like" for gateways

    def describe(self) -> str:
        if self.kind == "local_mirror":
            return f"mirror:{self.location}"
        flavor = "swarm" if self.gateway_flavor == "swarm_like" else "ipfs"
        return f"{flavor}:{self.location}"


def parse_target(spec: str) -> PushTarget:
    kind, _, location = spec.partition(":")
    if not location:
        raise ValidationFailure(f"bad push target {spec!r}: expected kind:location")
    if kind in ("mirror", "local_mirror"):
        return PushTarget(kind="local_mirror", location=location)
    if kind == "swarm":
        return PushTarget(kind="gateway", location=location, gateway_flavor="swarm_like")
    if kind == "ipfs":
        return PushTarget(kind="gateway", location=location, gateway_flavor="ipfs_like")
    raise ValidationFailure(
        f"bad push target {spec!r}: kind must be mirror, swarm, or ipfs"
    )


def targets_from_config(project_root, overrides=None) -> list[PushTarget]:
    """Explicit targets win, then CLAWXIV_PUSH_TARGETS, then project.yaml."""
    if overrides:
        return [parse_target(spec) for spec in overrides]
    env = os.environ.get(PUSH_TARGETS_ENV)
    if env:
        specs = [part.strip() for part in env.replace(";", ",").split(",")]
        return [parse_target(spec) for spec in specs if spec]
    return [parse_target(spec) for spec in load_metadata(project_root).push_targets]


@dataclass
class PushReceipt:
    target: str
    content_id: str
    pushed_at: str
    ok: bool = True
    error: str = ""

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "content_id": self.content_id,
            "pushed_at": self.pushed_at,
            "ok": self.ok,
            "error": self.error,
        }


# --- deterministic tar -------------------------------------------------------

def pack_bundle(bundle_dir) -> bytes:
    """Uncompressed POSIX tar, entries sorted by path, metadata zeroed."""
    bundle_dir = Path(bundle_dir)
    paths = sorted(
        p.relative_to(bundle_dir).as_posix()
        for p in bundle_dir.rglob("*")
        if p.is_file()
    )
    buffer = io.BytesIO()
    with tarfile.open(fileobj=buffer, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        for rel in paths:
            full = bundle_dir / rel
            info = tarfile.TarInfo(name=rel)
            info.size = full.stat().st_size
            info.mtime = 0
            info.mode = 0o644
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            with open(full, "rb") as handle:
                tar.addfile(info, handle)
    return buffer.getvalue()


def unpack_archive(data: bytes, dest) -> Path:
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    with tarfile.open(fileobj=io.BytesIO(data), mode="r:") as tar:
        for member in tar.getmembers():
            if not member.isfile():
                raise TransmitFailure(f"archive has non-file member {member.name!r}")
            name = Path(member.name)
            if name.is_absolute() or ".." in name.parts:
                raise TransmitFailure(f"archive member escapes tree: {member.name!r}")
        tar.extractall(dest)
    return dest


# --- push ---------------------------------------------------------------------

def _find_project_root(bundle_dir: Path) -> Path:
    for candidate in bundle_dir.resolve().parents:
        if (candidate / PROJECT_FILE).is_file():
            return candidate
    raise ValidationFailure(
        f"no project found above {bundle_dir}; pass the project explicitly"
    )


def _transmit(target: PushTarget, bundle_dir: Path, bundle_root: str) -> PushReceipt:
    pushed_at = now_timestamp()
    try:
        if target.kind == "local_mirror":
            mirror = Path(target.location)
            if not mirror.is_dir():
                raise TransmitFailure(f"mirror directory does not exist: {mirror}")
            dest = mirror / bundle_root
            if dest.exists():
                shutil.rmtree(dest)
            shutil.copytree(bundle_dir, dest, symlinks=False)
            return PushReceipt(
                target=target.describe(), content_id=bundle_root, pushed_at=pushed_at
            )
        response = requests.post(
            target.location,
            data=pack_bundle(bundle_dir),
            headers={"Content-Type": "application/x-tar"},
            timeout=_HTTP_TIMEOUT,
        )
        if response.status_code != 200:
            raise TransmitFailure(
                f"gateway returned {response.status_code}: {response.text[:200]}"
            )
        content_id = response.text.splitlines()[0].strip() if response.text else ""
        if not content_id:
            raise TransmitFailure("gateway returned no content id")
        return PushReceipt(
            target=target.describe(), content_id=content_id, pushed_at=pushed_at
        )
    except (TransmitFailure, OSError, requests.RequestException) as exc:
        return PushReceipt(
            target=target.describe(),
            content_id="",
            pushed_at=pushed_at,
            ok=False,
            error=str(exc),
        )


def bundle_push(
    bundle_dir,
    targets: list[PushTarget],
    evidence: AdmissionEvidence,
    author_index,
    policy: AdmissionPolicy = AdmissionPolicy(),
    project_root=None,
    provider=None,
    force_ids: bool = False,
) -> list[PushReceipt]:
    """Verify, gate, and transmit a sealed bundle; record receipts.

    Aborts before any target is touched if a gate fails; the publication
    event (with all receipt ids) is appended to the transparency log under
    a fresh sign-and-discard key.
    """
    bundle_dir = Path(bundle_dir)
    project_root = (
        Path(project_root) if project_root is not None else _find_project_root(bundle_dir)
    )
    manifest_path = bundle_dir / MANIFEST_FILENAME
    if not manifest_path.is_file():
        raise ValidationFailure(f"no {MANIFEST_FILENAME} in {bundle_dir}")
    manifest = parse_manifest(manifest_path.read_bytes())
    bundle_root = manifest.bundle_root
    if not targets:
        raise ValidationFailure("no push targets configured")

    metadata = load_metadata(project_root)
    if metadata.version_label.is_rc:
        raise GateFailure(
            "version gate: rc-labeled versions are never pushed publicly "
            f"({metadata.version_label.render()})"
        )

    recheck = recheck_all(bundle_dir, provider=provider)
    if recheck.blocking:
        blocked = ", ".join(e.path for e in recheck.entries if e.blocking)
        raise SafetyRefusal(f"safety re-check blocked publication of: {blocked}")

    report = bundle_verify(bundle_dir, provider=provider)
    if not report.passed:
        raise GateFailure("bundle verification failed: " + "; ".join(report.problems))
    if report.signatures != "ok":
        raise GateFailure("signature gate: bundle carries no valid attestations")

    verdict = admissible(bundle_root, evidence, author_index, policy)
    if not verdict:
        raise GateFailure(f"admission gate: {verdict.reason}")

    receipts = [_transmit(target, bundle_dir, bundle_root) for target in targets]

    with project_lock(project_root):
        for receipt in receipts:
            append_release_log(
                project_root,
                "bundle-push",
                bundle_root,
                receipt.target,
                receipt.content_id or "-",
                "ok" if receipt.ok else f"failed: {receipt.error}",
            )
        entry = make_entry(
            "publication",
            bundle_root,
            {
                "admission_route": verdict.route,
                "receipts": [receipt.to_dict() for receipt in receipts],
            },
            generate_private_key(),
        )
        project_log(project_root).append(entry)

        swarm_id = next(
            (r.content_id for r in receipts
             if r.ok and r.target.startswith("swarm:")),
            None,
        )
        ipfs_id = next(
            (r.content_id for r in receipts
             if r.ok and r.target.startswith("ipfs:")),
            None,
        )
        if swarm_id or ipfs_id:
            try:
                record_publication_ids(
                    project_root,
                    swarm_hash=swarm_id,
                    ipfs_cid=ipfs_id,
                    force=force_ids,
                )
            except ValidationFailure as exc:
                log.warning("publication ids not recorded: %s", exc)
    return receipts


# --- resolve ---------------------------------------------------------------------

def _verify_resolved_tree(tree: Path, content_id: str) -> None:
    manifest = parse_manifest((tree / MANIFEST_FILENAME).read_bytes())
    entries = scan_tree(tree, exclusions=BUNDLE_EXCLUDES)
    recomputed = compute_bundle_root(entries, manifest.metadata_dict()).hex()
    if recomputed != content_id:
        raise TransmitFailure(
            f"integrity check failed: tree recomputes to {recomputed}, "
            f"expected {content_id}"
        )


def resolve(content_id: str, targets: list[PushTarget], dest) -> Path:
    """Fetch a bundle from the first target serving the id.

    Local mirrors enforce content addressing on read: the returned tree
    must recompute to the requested id.
    """
    dest = Path(dest)
    tried = []
    for target in targets:
        tried.append(target.describe())
        if target.kind == "local_mirror":
            source = Path(target.location) / content_id
            if not (source / MANIFEST_FILENAME).is_file():
                continue
            if dest.exists():
                shutil.rmtree(dest)
            shutil.copytree(source, dest, symlinks=False)
            _verify_resolved_tree(dest, content_id)
            return dest
        url = target.location.rstrip("/") + "/" + content_id
        try:
            response = requests.get(url, timeout=_HTTP_TIMEOUT)
        except requests.RequestException:
            continue
        if response.status_code != 200:
            continue
        if dest.exists():
            shutil.rmtree(dest)
        return unpack_archive(response.content, dest)
    raise TransmitFailure(
        f"content id {content_id} not found on any target (tried: {', '.join(tried)})"
    )
