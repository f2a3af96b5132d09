"""Canonical manifest: deterministic description of a bundle's exact contents.

The manifest is the thing signatures bind to. Its byte encoding is
canonical JSON (sorted keys, no whitespace, UTF-8, lowercase hex digests)
so that equal manifests encode identically, and the bundle identifier is
the root of a Merkle tree whose leaves are the file entries in path order
followed by one leaf for the remaining manifest metadata. Changing any
file byte, any path, or any metadata field changes the identifier.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import merkle
from .canonical import (
    canonical_json_bytes,
    is_hex_digest,
    parse_timestamp,
)
from .errors import ValidationFailure
from .signing import load_public_pem

MANIFEST_FILENAME = "manifest.json"

AUTHOR_KINDS = ("human", "ai", "organizational")
AUTHOR_RESPONSIBILITIES = ("corresponding", "contributor")

_MIME_BY_EXT = {
    "bib": "application/x-bibtex",
    "bin": "application/octet-stream",
    "bmp": "image/bmp",
    "cls": "application/x-tex",
    "css": "text/css",
    "csv": "text/csv",
    "emf": "image/emf",
    "eps": "application/postscript",
    "gif": "image/gif",
    "htm": "text/html",
    "html": "text/html",
    "jpeg": "image/jpeg",
    "jpg": "image/jpeg",
    "json": "application/json",
    "log": "text/plain",
    "md": "text/markdown",
    "pdf": "application/pdf",
    "png": "image/png",
    "ps": "application/postscript",
    "py": "text/x-python",
    "sh": "application/x-sh",
    "sty": "application/x-tex",
    "svg": "image/svg+xml",
    "tex": "application/x-tex",
    "tif": "image/tiff",
    "tiff": "image/tiff",
    "txt": "text/plain",
    "webp": "image/webp",
    "wmf": "image/wmf",
    "yaml": "application/yaml",
    "yml": "application/yaml",
}

_HASH_CHUNK = 1 << 16


def guess_mime(path: str) -> str:
    ext = path.rsplit(".", 1)[-1].lower() if "." in path else ""
    return _MIME_BY_EXT.get(ext, "application/octet-stream")


def _path_problems(path: str) -> list[str]:
    problems = []
    if not path:
        return ["path is empty"]
    if path.startswith("/"):
        problems.append("path is absolute")
    segments = path.split("/")
    if "" in segments:
        problems.append("path has an empty segment")
    if "." in segments or ".." in segments:
        problems.append("path contains '.' or '..' segments")
    return problems


# --- domain types ----------------------------------------------------------

@dataclass(frozen=True)
class FileEntry:
    path: str
    sha256: str
    size: int
    mime: str

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "sha256": self.sha256,
            "size": self.size,
            "mime": self.mime,
        }

    def leaf_bytes(self) -> bytes:
        return canonical_json_bytes(self.to_dict())


@dataclass(frozen=True)
class AuthorRecord:
    pubkey_pem: str
    claims: tuple[str, ...]
    verified_credentials: tuple[str, ...]
    role_kind: str
    role_responsibility: str

    def display_name(self) -> str:
        for claim in self.claims:
            if claim.startswith("name:"):
                return claim[len("name:"):]
        return ""

    def to_dict(self) -> dict:
        return {
            "pubkey_pem": self.pubkey_pem,
            "claims": list(self.claims),
            "verified_credentials": list(self.verified_credentials),
            "role": {
                "kind": self.role_kind,
                "responsibility": self.role_responsibility,
            },
        }


@dataclass(frozen=True)
class ProvenanceRecord:
    type: str
    hash: str
    signature: str = ""  # base64 detached signature, empty when absent

    def to_dict(self) -> dict:
        return {"type": self.type, "hash": self.hash, "signature": self.signature}


@dataclass(frozen=True)
class BuildPin:
    engine: str = "none"
    container_digest: str = ""
    cmd: str = ""

    def to_dict(self) -> dict:
        return {
            "engine": self.engine,
            "container_digest": self.container_digest,
            "cmd": self.cmd,
        }


@dataclass
class Manifest:
    manifest_version: int = 1
    created_at: str = ""
    bundle_root: str = ""  # empty until sealed
    files: list[FileEntry] = field(default_factory=list)
    build: BuildPin = field(default_factory=BuildPin)
    authors: list[AuthorRecord] = field(default_factory=list)
    provenance: list[ProvenanceRecord] = field(default_factory=list)
    licenses: list[str] = field(default_factory=list)
    tags_self: list[str] = field(default_factory=list)
    tags_official_ref: list[str] = field(default_factory=list)

    def metadata_dict(self) -> dict:
        """Everything except files and bundle_root: the final Merkle leaf."""
        return {
            "manifest_version": self.manifest_version,
            "created_at": self.created_at,
            "build": self.build.to_dict(),
            "authors": [a.to_dict() for a in self.authors],
            "provenance": [p.to_dict() for p in self.provenance],
            "licenses": list(self.licenses),
            "tags_self": list(self.tags_self),
            "tags_official_ref": list(self.tags_official_ref),
        }

    def to_dict(self) -> dict:
        full = self.metadata_dict()
        full["bundle_root"] = self.bundle_root
        full["files"] = [f.to_dict() for f in self.files]
        return full

    def seal(self) -> str:
        """Set bundle_root from the current contents. Idempotent."""
        self.bundle_root = compute_bundle_root(
            self.files, self.metadata_dict()
        ).hex()
        return self.bundle_root


# --- operations ------------------------------------------------------------

def _hash_file(path: Path) -> tuple[str, int]:
    digest = hashlib.sha256()
    size = 0
    with open(path, "rb") as handle:
        while True:
            chunk = handle.read(_HASH_CHUNK)
            if not chunk:
                break
            digest.update(chunk)
            size += len(chunk)
    return digest.hexdigest(), size


def _excluded(rel: str, exclusions) -> bool:
    for rule in exclusions:
        rule = rule.rstrip("/")
        if rule and (rel == rule or rel.startswith(rule + "/")):
            return True
    return False


def scan_tree(root, exclusions=()) -> list[FileEntry]:
    """One FileEntry per regular file under root, path-sorted byte-wise.

    Symlinks and other non-regular files are refused: a bundle must be
    self-contained and reproduce identically on any host.
    """
    root = Path(root)
    if not root.is_dir():
        raise ValidationFailure(f"not a readable directory: {root}")
    entries: list[FileEntry] = []
    for dirpath, dirnames, filenames in os.walk(root, followlinks=False):
        base = Path(dirpath)
        rel_base = base.relative_to(root).as_posix()
        keep = []
        for name in sorted(dirnames):
            rel = name if rel_base == "." else f"{rel_base}/{name}"
            if _excluded(rel, exclusions):
                continue
            if (base / name).is_symlink():
                raise ValidationFailure(
                    f"symlink refused (bundles must be self-contained): {rel}"
                )
            keep.append(name)
        dirnames[:] = keep
        for name in sorted(filenames):
            rel = name if rel_base == "." else f"{rel_base}/{name}"
            if _excluded(rel, exclusions):
                continue
            full = base / name
            if full.is_symlink():
                raise ValidationFailure(
                    f"symlink refused (bundles must be self-contained): {rel}"
                )
            if not full.is_file():
                raise ValidationFailure(f"not a regular file: {rel}")
            try:
                rel.encode("utf-8").decode("utf-8")
            except UnicodeError as exc:
                raise ValidationFailure(
                    f"path does not round-trip UTF-8: {rel!r}"
                ) from exc
            try:
                sha, size = _hash_file(full)
            except OSError as exc:
                raise ValidationFailure(f"unreadable file {rel}: {exc}") from exc
            entries.append(
                FileEntry(path=rel, sha256=sha, size=size, mime=guess_mime(rel))
            )
    entries.sort(key=lambda e: e.path.encode("utf-8"))
    return entries


def canonical_encode(manifest: Manifest) -> bytes:
    """Deterministic bytes: equal manifests encode identically."""
    return canonical_json_bytes(manifest.to_dict())


def _check_file_order(files) -> None:
    previous = None
    for entry in files:
        encoded = entry.path.encode("utf-8")
        if previous is not None and encoded <= previous:
            raise ValidationFailure(
                f"files not strictly sorted by path bytes at {entry.path!r}"
            )
        previous = encoded


def compute_bundle_root(files, metadata: dict) -> bytes:
    """Merkle root over file-entry leaves plus one final metadata leaf."""
    _check_file_order(files)
    leaves = [merkle.leaf_hash(entry.leaf_bytes()) for entry in files]
    leaves.append(merkle.leaf_hash(canonical_json_bytes(metadata)))
    return merkle.root_from_leaf_hashes(leaves)


def validate_manifest(manifest: Manifest) -> list[str]:
    """Empty list for a valid manifest; otherwise one violation per rule."""
    violations: list[str] = []
    if not isinstance(manifest.manifest_version, int) or manifest.manifest_version < 1:
        violations.append("manifest_version: must be an integer >= 1")
    try:
        parse_timestamp(manifest.created_at)
    except ValidationFailure:
        violations.append("created_at: not an RFC 3339 UTC timestamp with seconds")
    if manifest.bundle_root != "" and not is_hex_digest(manifest.bundle_root):
        violations.append("bundle_root: not 64 lowercase hex characters")

    seen_paths = set()
    previous = None
    for i, entry in enumerate(manifest.files):
        label = f"files[{i}] ({entry.path!r})"
        for problem in _path_problems(entry.path):
            violations.append(f"{label}: {problem}")
        if entry.path in seen_paths:
            violations.append(f"{label}: duplicate path")
        seen_paths.add(entry.path)
        encoded = entry.path.encode("utf-8")
        if previous is not None and encoded <= previous:
            violations.append(
                f"files ordering: {entry.path!r} not strictly after predecessor"
            )
        previous = encoded
        if not is_hex_digest(entry.sha256):
            violations.append(f"{label}: sha256 not 64 lowercase hex")
        if not isinstance(entry.size, int) or entry.size < 0:
            violations.append(f"{label}: size must be a non-negative integer")
        if not isinstance(entry.mime, str) or not entry.mime:
            violations.append(f"{label}: mime must be a non-empty string")

    for i, author in enumerate(manifest.authors):
        label = f"authors[{i}]"
        if author.role_kind not in AUTHOR_KINDS:
            violations.append(f"{label}.role.kind: not one of {AUTHOR_KINDS}")
        if author.role_responsibility not in AUTHOR_RESPONSIBILITIES:
            violations.append(
                f"{label}.role.responsibility: not one of {AUTHOR_RESPONSIBILITIES}"
            )
        try:
            load_public_pem(author.pubkey_pem)
        except ValidationFailure:
            violations.append(f"{label}.pubkey_pem: not a valid Ed25519 public key")

    for i, record in enumerate(manifest.provenance):
        if not is_hex_digest(record.hash):
            violations.append(f"provenance[{i}].hash: not 64 lowercase hex")
        if not record.type:
            violations.append(f"provenance[{i}].type: empty")

    if manifest.bundle_root and is_hex_digest(manifest.bundle_root) and not any(
        v.startswith("files") for v in violations
    ):
        try:
            expected = compute_bundle_root(
                manifest.files, manifest.metadata_dict()
            ).hex()
            if expected != manifest.bundle_root:
                violations.append(
                    "bundle_root: does not match recomputed Merkle root"
                )
        except ValidationFailure as exc:
            violations.append(f"bundle_root: cannot recompute ({exc})")
    return violations


def parse_manifest(data: bytes) -> Manifest:
    """Parse manifest.json bytes; raises on structurally malformed input."""
    try:
        raw = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ValidationFailure(f"manifest.json: unparseable ({exc})") from exc
    if not isinstance(raw, dict):
        raise ValidationFailure("manifest.json: not a JSON object")
    try:
        files = [
            FileEntry(
                path=f["path"], sha256=f["sha256"], size=f["size"], mime=f["mime"]
            )
            for f in raw.get("files", [])
        ]
        build_raw = raw.get("build", {})
        authors = [
            AuthorRecord(
                pubkey_pem=a["pubkey_pem"],
                claims=tuple(a.get("claims", [])),
                verified_credentials=tuple(a.get("verified_credentials", [])),
                role_kind=a.get("role", {}).get("kind", ""),
                role_responsibility=a.get("role", {}).get("responsibility", ""),
            )
            for a in raw.get("authors", [])
        ]
        provenance = [
            ProvenanceRecord(
                type=p["type"], hash=p["hash"], signature=p.get("signature", "")
            )
            for p in raw.get("provenance", [])
        ]
        return Manifest(
            manifest_version=raw["manifest_version"],
            created_at=raw["created_at"],
            bundle_root=raw.get("bundle_root", ""),
            files=files,
            build=BuildPin(
                engine=build_raw.get("engine", ""),
                container_digest=build_raw.get("container_digest", ""),
                cmd=build_raw.get("cmd", ""),
            ),
            authors=authors,
            provenance=provenance,
            licenses=list(raw.get("licenses", [])),
            tags_self=list(raw.get("tags_self", [])),
            tags_official_ref=list(raw.get("tags_official_ref", [])),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationFailure(f"manifest.json: missing or bad field ({exc})") from exc
