"""Admission evidence: hashcash proof-of-work and vouching assertions.

Vouching is the primary admission mechanism: one co-signature from an
already-indexed author admits a bundle. Proof-of-work is the fallback for
authors with no connection to the index. The production difficulty target
is a deployment policy; the protocol only fixes the message layout
(raw 32-byte bundle root followed by the nonce as 8 big-endian bytes) and
the leading-zero-bits rule.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.exceptions import InvalidSignature

from .canonical import canonical_json_bytes, is_hex_digest, now_timestamp
from .errors import ValidationFailure
from .signing import (
    load_private_key,
    load_public_pem,
    public_from_raw_b64,
    raw_public_b64,
)

AUTHOR_INDEX_ENV = "CLAWXIV_AUTHOR_INDEX"
VOUCH_CONTEXT = b"clawxiv-vouch-v1"
DEFAULT_MIN_DIFFICULTY = 20

ADMISSION_DIR = "admission"


@dataclass(frozen=True)
class PowStamp:
    bundle_root: str
    difficulty_bits: int
    nonce: int
    created_at: str

    def to_dict(self) -> dict:
        return {
            "bundle_root": self.bundle_root,
            "difficulty_bits": self.difficulty_bits,
            "nonce": self.nonce,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PowStamp":
        try:
            return cls(
                bundle_root=data["bundle_root"],
                difficulty_bits=int(data["difficulty_bits"]),
                nonce=int(data["nonce"]),
                created_at=data.get("created_at", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationFailure(f"malformed pow stamp: {exc}") from exc


@dataclass(frozen=True)
class VouchAssertion:
    bundle_root: str
    voucher_pubkey: str  # base64 raw Ed25519 public key
    signature: str  # base64, over VOUCH_CONTEXT || raw bundle root bytes
    created_at: str

    def to_dict(self) -> dict:
        return {
            "bundle_root": self.bundle_root,
            "voucher_pubkey": self.voucher_pubkey,
            "signature": self.signature,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VouchAssertion":
        try:
            return cls(
                bundle_root=data["bundle_root"],
                voucher_pubkey=data["voucher_pubkey"],
                signature=data["signature"],
                created_at=data.get("created_at", ""),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationFailure(f"malformed vouch assertion: {exc}") from exc


# --- proof of work ----------------------------------------------------------

def pow_digest(bundle_root: str, nonce: int) -> bytes:
    return hashlib.sha256(
        bytes.fromhex(bundle_root) + nonce.to_bytes(8, "big")
    ).digest()


def leading_zero_bits(digest: bytes) -> int:
    return 256 - int.from_bytes(digest, "big").bit_length()


def mint_pow(bundle_root: str, difficulty_bits: int, start_nonce: int = 0) -> PowStamp:
    """Search nonces sequentially from start_nonce until one solves.

    Sequential search makes the attempt count recoverable from the stamp
    (nonce - start_nonce + 1), which the statistical checks rely on.
    """
    if not is_hex_digest(bundle_root):
        raise ValidationFailure(f"bad bundle root: {bundle_root!r}")
    if not isinstance(difficulty_bits, int) or not 1 <= difficulty_bits <= 64:
        raise ValidationFailure(
            f"difficulty_bits must be in 1..64, got {difficulty_bits!r}"
        )
    prefix = bytes.fromhex(bundle_root)
    threshold = 1 << (256 - difficulty_bits)
    nonce = start_nonce
    while True:
        digest = hashlib.sha256(prefix + nonce.to_bytes(8, "big")).digest()
        if int.from_bytes(digest, "big") < threshold:
            return PowStamp(
                bundle_root=bundle_root,
                difficulty_bits=difficulty_bits,
                nonce=nonce,
                created_at=now_timestamp(),
            )
        nonce += 1


def verify_pow(stamp: PowStamp) -> bool:
    """Single hash recomputation; malformed stamps reject, never crash."""
    if not is_hex_digest(stamp.bundle_root):
        return False
    if not isinstance(stamp.difficulty_bits, int) or not 1 <= stamp.difficulty_bits <= 64:
        return False
    if not isinstance(stamp.nonce, int) or not 0 <= stamp.nonce < 1 << 64:
        return False
    digest = pow_digest(stamp.bundle_root, stamp.nonce)
    return leading_zero_bits(digest) >= stamp.difficulty_bits


# --- vouching ----------------------------------------------------------------

def create_vouch(bundle_root: str, voucher_key_source) -> VouchAssertion:
    """Co-sign a bundle root with a persistent voucher key.

    Voucher keys are long-lived author keys, distinct from the ephemeral
    sign-and-discard attestation keys.
    """
    if not is_hex_digest(bundle_root):
        raise ValidationFailure(f"bad bundle root: {bundle_root!r}")
    key = load_private_key(voucher_key_source)
    signature = key.sign(VOUCH_CONTEXT + bytes.fromhex(bundle_root))
    return VouchAssertion(
        bundle_root=bundle_root,
        voucher_pubkey=raw_public_b64(key.public_key()),
        signature=base64.b64encode(signature).decode("ascii"),
        created_at=now_timestamp(),
    )


def verify_vouch(vouch: VouchAssertion, bundle_root: str | None = None) -> bool:
    root = bundle_root if bundle_root is not None else vouch.bundle_root
    if not is_hex_digest(root) or vouch.bundle_root != root:
        return False
    try:
        public_key = public_from_raw_b64(vouch.voucher_pubkey)
        signature = base64.b64decode(vouch.signature, validate=True)
        public_key.verify(signature, VOUCH_CONTEXT + bytes.fromhex(root))
        return True
    except (InvalidSignature, ValidationFailure, ValueError):
        return False


def load_author_index(path=None) -> frozenset[str]:
    """Known voucher public keys (base64 raw) from a file of PEM blocks."""
    if path is None:
        path = os.environ.get(AUTHOR_INDEX_ENV)
    if path is None:
        return frozenset()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationFailure(f"author index unreadable: {exc}") from exc
    keys = set()
    block: list[str] = []
    inside = False
    for line in text.splitlines():
        if "-----BEGIN PUBLIC KEY-----" in line:
            inside = True
            block = [line]
        elif "-----END PUBLIC KEY-----" in line and inside:
            block.append(line)
            keys.add(raw_public_b64(load_public_pem("\n".join(block) + "\n")))
            inside = False
        elif inside:
            block.append(line)
    return frozenset(keys)


# --- admission rule ------------------------------------------------------------

@dataclass
class AdmissionEvidence:
    stamps: list[PowStamp] = field(default_factory=list)
    vouches: list[VouchAssertion] = field(default_factory=list)


@dataclass(frozen=True)
class AdmissionPolicy:
    min_difficulty: int = DEFAULT_MIN_DIFFICULTY


@dataclass(frozen=True)
class Admissibility:
    admissible: bool
    reason: str = ""
    route: str = ""  # "vouch" or "pow" when admissible

    def __bool__(self) -> bool:
        return self.admissible


def admissible(
    bundle_root: str,
    evidence: AdmissionEvidence,
    author_index: frozenset[str] | set[str],
    policy: AdmissionPolicy = AdmissionPolicy(),
) -> Admissibility:
    """Vouch-first disjunction: an indexed co-signature admits a bundle,
    otherwise sufficiently hard proof-of-work does."""
    for vouch in evidence.vouches:
        if verify_vouch(vouch, bundle_root) and vouch.voucher_pubkey in author_index:
            return Admissibility(True, route="vouch")
    for stamp in evidence.stamps:
        if (
            stamp.bundle_root == bundle_root
            and stamp.difficulty_bits >= policy.min_difficulty
            and verify_pow(stamp)
        ):
            return Admissibility(True, route="pow")
    if not evidence.vouches and not evidence.stamps:
        return Admissibility(False, reason="no admission evidence")
    return Admissibility(
        False,
        reason=(
            "no valid vouch from an indexed author and no proof-of-work at "
            f"difficulty >= {policy.min_difficulty}"
        ),
    )


# --- evidence files --------------------------------------------------------------

def save_stamp(project_root, stamp: PowStamp) -> Path:
    out = Path(project_root) / "out" / ADMISSION_DIR
    out.mkdir(parents=True, exist_ok=True)
    path = out / "pow.json"
    path.write_bytes(canonical_json_bytes(stamp.to_dict()))
    return path


def save_vouch(project_root, vouch: VouchAssertion) -> Path:
    out = Path(project_root) / "out" / ADMISSION_DIR
    out.mkdir(parents=True, exist_ok=True)
    tag = hashlib.sha256(vouch.voucher_pubkey.encode("ascii")).hexdigest()[:8]
    path = out / f"vouch-{tag}.json"
    path.write_bytes(canonical_json_bytes(vouch.to_dict()))
    return path


def load_evidence(project_root, bundle_root: str | None = None) -> AdmissionEvidence:
    """All stored stamps and vouches, optionally filtered to one root."""
    out = Path(project_root) / "out" / ADMISSION_DIR
    evidence = AdmissionEvidence()
    if not out.is_dir():
        return evidence
    for path in sorted(out.glob("*.json")):
        try:
            data = json.loads(path.read_bytes())
        except ValueError as exc:
            raise ValidationFailure(f"corrupt evidence file {path.name}: {exc}") from exc
        if path.name == "pow.json" or "nonce" in data:
            stamp = PowStamp.from_dict(data)
            if bundle_root is None or stamp.bundle_root == bundle_root:
                evidence.stamps.append(stamp)
        else:
            vouch = VouchAssertion.from_dict(data)
            if bundle_root is None or vouch.bundle_root == bundle_root:
                evidence.vouches.append(vouch)
    return evidence
