"""Sidecar attestation: per-artifact ephemeral Ed25519 keys, sign-and-discard.

A release carries attestations, not operator-held keys: for each artifact
the named signer generates a fresh keypair, signs the 32 raw bytes of the
artifact's SHA-256 digest, publishes the public key alongside the artifact,
and discards the private key. Human and AI signers use the identical
mechanism and schema; custody evidence is recorded but never consulted
when verifying.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519

from .canonical import canonical_json_bytes, is_hex_digest, now_timestamp
from .errors import GateFailure, ValidationFailure

SIGNER_KINDS = ("human", "ai")


def slugify(name: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")
    return slug or "signer"


# --- key material helpers -------------------------------------------------

def generate_private_key() -> ed25519.Ed25519PrivateKey:
    """Fresh keypair; separate function so tests can observe key material."""
    return ed25519.Ed25519PrivateKey.generate()


def public_key_to_pem(key: ed25519.Ed25519PublicKey) -> str:
    return key.public_bytes(
        serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
    ).decode("ascii")


def load_public_pem(pem: str | bytes) -> ed25519.Ed25519PublicKey:
    if isinstance(pem, str):
        pem = pem.encode("ascii")
    try:
        key = serialization.load_pem_public_key(pem)
    except Exception as exc:
        raise ValidationFailure(f"not a valid public key PEM: {exc}") from exc
    if not isinstance(key, ed25519.Ed25519PublicKey):
        raise ValidationFailure("public key is not Ed25519")
    return key


def load_private_key(source) -> ed25519.Ed25519PrivateKey:
    """Accept a key object, PEM bytes/str, or a path to a PEM file."""
    if isinstance(source, ed25519.Ed25519PrivateKey):
        return source
    if isinstance(source, (str, Path)) and os.path.exists(source):
        try:
            source = Path(source).read_bytes()
        except OSError as exc:
            raise ValidationFailure(f"voucher key unavailable: {exc}") from exc
    if isinstance(source, str):
        source = source.encode("ascii")
    if not isinstance(source, bytes):
        raise ValidationFailure(f"voucher key unavailable: {source!r}")
    try:
        key = serialization.load_pem_private_key(source, password=None)
    except Exception as exc:
        raise ValidationFailure(f"voucher key unavailable: {exc}") from exc
    if not isinstance(key, ed25519.Ed25519PrivateKey):
        raise ValidationFailure("private key is not Ed25519")
    return key


def raw_public_b64(key: ed25519.Ed25519PublicKey) -> str:
    raw = key.public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return base64.b64encode(raw).decode("ascii")


def public_from_raw_b64(text: str) -> ed25519.Ed25519PublicKey:
    try:
        raw = base64.b64decode(text, validate=True)
        return ed25519.Ed25519PublicKey.from_public_bytes(raw)
    except Exception as exc:
        raise ValidationFailure(f"bad public key encoding: {exc}") from exc


# --- domain types ----------------------------------------------------------

@dataclass(frozen=True)
class SignerIdentity:
    kind: str
    display_name: str
    model_name: str = ""
    provider: str = ""
    release: str = ""

    def __post_init__(self):
        if self.kind not in SIGNER_KINDS:
            raise ValidationFailure(f"signer kind must be one of {SIGNER_KINDS}")
        ai_fields = (self.model_name, self.provider, self.release)
        if self.kind == "ai" and not all(ai_fields):
            raise ValidationFailure(
                "ai signers require model_name, provider, and release"
            )
        if self.kind == "human" and any(ai_fields):
            raise ValidationFailure("model fields must be empty for human signers")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "display_name": self.display_name,
            "model_name": self.model_name,
            "provider": self.provider,
            "release": self.release,
        }


@dataclass(frozen=True)
class CustodyEvidence:
    """Where an attestation was produced. Context only, never verified."""

    machine_id: str = ""
    container_id: str = ""
    hardware_uuid: str = ""

    def to_dict(self) -> dict:
        return {
            "machine_id": self.machine_id,
            "container_id": self.container_id,
            "hardware_uuid": self.hardware_uuid,
        }


@dataclass(frozen=True)
class SidecarAttestation:
    signer: SignerIdentity
    artifact_sha256: str
    public_key: str  # base64 of the raw 32-byte Ed25519 public key
    signature: str  # base64, over the 32 raw digest bytes
    created_at: str
    custody: CustodyEvidence = field(default_factory=CustodyEvidence)

    def to_dict(self) -> dict:
        return {
            "artifact_sha256": self.artifact_sha256,
            "created_at": self.created_at,
            "custody": self.custody.to_dict(),
            "public_key": self.public_key,
            "signature": self.signature,
            "signer": self.signer.to_dict(),
        }

    def to_bytes(self) -> bytes:
        return canonical_json_bytes(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "SidecarAttestation":
        try:
            signer = SignerIdentity(
                kind=data["signer"]["kind"],
                display_name=data["signer"]["display_name"],
                model_name=data["signer"].get("model_name", ""),
                provider=data["signer"].get("provider", ""),
                release=data["signer"].get("release", ""),
            )
            custody_data = data.get("custody", {})
            custody = CustodyEvidence(
                machine_id=custody_data.get("machine_id", ""),
                container_id=custody_data.get("container_id", ""),
                hardware_uuid=custody_data.get("hardware_uuid", ""),
            )
            return cls(
                signer=signer,
                artifact_sha256=data["artifact_sha256"],
                public_key=data["public_key"],
                signature=data["signature"],
                created_at=data["created_at"],
                custody=custody,
            )
        except (KeyError, TypeError) as exc:
            raise ValidationFailure(f"malformed attestation: {exc}") from exc

    @classmethod
    def from_bytes(cls, data: bytes) -> "SidecarAttestation":
        try:
            parsed = json.loads(data)
        except (ValueError, UnicodeDecodeError) as exc:
            raise ValidationFailure(f"malformed attestation: {exc}") from exc
        if not isinstance(parsed, dict):
            raise ValidationFailure("malformed attestation: not an object")
        return cls.from_dict(parsed)


@dataclass(frozen=True)
class VerifyResult:
    accepted: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.accepted


# --- operations ------------------------------------------------------------

def _artifact_bytes(artifact) -> bytes:
    if isinstance(artifact, bytes):
        return artifact
    if isinstance(artifact, (str, Path)):
        return Path(artifact).read_bytes()
    raise ValidationFailure(f"unreadable artifact source: {type(artifact).__name__}")


def sign_artifact(
    artifact,
    signer: SignerIdentity,
    custody: CustodyEvidence | None = None,
    created_at: str | None = None,
) -> SidecarAttestation:
    """Sign SHA-256(artifact) with a fresh keypair and discard the key.

    The private key exists only inside this call; nothing is ever written
    to disk, and the local reference is dropped before returning.
    """
    digest = hashlib.sha256(_artifact_bytes(artifact)).digest()
    private_key = generate_private_key()
    signature = private_key.sign(digest)
    public_b64 = raw_public_b64(private_key.public_key())
    del private_key
    return SidecarAttestation(
        signer=signer,
        artifact_sha256=digest.hex(),
        public_key=public_b64,
        signature=base64.b64encode(signature).decode("ascii"),
        created_at=created_at or now_timestamp(),
        custody=custody or CustodyEvidence(),
    )


def verify_attestation(artifact, attestation) -> VerifyResult:
    """Accept iff the artifact digest matches and the signature verifies."""
    try:
        if isinstance(attestation, (bytes, bytearray)):
            attestation = SidecarAttestation.from_bytes(bytes(attestation))
        elif isinstance(attestation, dict):
            attestation = SidecarAttestation.from_dict(attestation)
        if not is_hex_digest(attestation.artifact_sha256):
            return VerifyResult(False, "malformed: artifact_sha256 is not a digest")
    except ValidationFailure as exc:
        return VerifyResult(False, str(exc))

    digest = hashlib.sha256(_artifact_bytes(artifact)).hexdigest()
    if digest != attestation.artifact_sha256:
        return VerifyResult(False, "digest mismatch")
    try:
        public_key = public_from_raw_b64(attestation.public_key)
        signature = base64.b64decode(attestation.signature, validate=True)
        public_key.verify(signature, bytes.fromhex(attestation.artifact_sha256))
    except InvalidSignature:
        return VerifyResult(False, "signature invalid")
    except (ValidationFailure, ValueError) as exc:
        return VerifyResult(False, f"malformed: {exc}")
    return VerifyResult(True)


def verify_attestation_signature(attestation: SidecarAttestation) -> bool:
    """Internal-consistency check: signature verifies over the claimed digest."""
    if not is_hex_digest(attestation.artifact_sha256):
        return False
    try:
        public_key = public_from_raw_b64(attestation.public_key)
        signature = base64.b64decode(attestation.signature, validate=True)
        public_key.verify(signature, bytes.fromhex(attestation.artifact_sha256))
        return True
    except (InvalidSignature, ValidationFailure, ValueError):
        return False


@dataclass
class SigningManifest:
    artifact_sha256: str
    attestations: list[SidecarAttestation]
    required_signers: list[str]
    present_signers: list[str]
    missing_signers: list[str]
    complete: bool

    def to_dict(self) -> dict:
        return {
            "artifact_sha256": self.artifact_sha256,
            "attestations": [a.to_dict() for a in self.attestations],
            "required_signers": self.required_signers,
            "present_signers": self.present_signers,
            "missing_signers": self.missing_signers,
            "complete": self.complete,
        }


def build_signing_manifest(
    project_root, attestations: list[SidecarAttestation]
) -> SigningManifest:
    """Aggregate attestations over one artifact and write the manifest file.

    Required signers come from the project author list; completeness means
    every project author has a verifying attestation.
    """
    from .project import author_display_names  # late import: project uses signing

    digests = {a.artifact_sha256 for a in attestations}
    if len(digests) > 1:
        raise ValidationFailure(
            f"attestations cover {len(digests)} different digests"
        )
    for attestation in attestations:
        if not verify_attestation_signature(attestation):
            raise ValidationFailure(
                f"attestation by {attestation.signer.display_name!r} does not verify"
            )

    ordered = sorted(
        attestations, key=lambda a: (a.signer.kind, a.signer.display_name)
    )
    required = author_display_names(project_root)
    present = [name for name in required
               if any(a.signer.display_name == name for a in ordered)]
    missing = [name for name in required if name not in present]
    manifest = SigningManifest(
        artifact_sha256=next(iter(digests)) if digests else "",
        attestations=ordered,
        required_signers=required,
        present_signers=present,
        missing_signers=missing,
        complete=bool(required) and not missing,
    )
    out_dir = Path(project_root) / "out"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "signing-manifest.json").write_bytes(
        canonical_json_bytes(manifest.to_dict())
    )
    return manifest


def promote_version(project_root, manifest: SigningManifest):
    """Strip the rc component once every project author has signed."""
    from .project import load_metadata, save_metadata
    from .project import VersionLabel

    if not manifest.complete:
        raise GateFailure(
            "promotion refused: missing attestations from "
            + ", ".join(manifest.missing_signers or ["all authors"])
        )
    metadata = load_metadata(project_root)
    promoted = VersionLabel(major=metadata.version_label.major)
    metadata.version_label = promoted
    save_metadata(project_root, metadata)
    return promoted
