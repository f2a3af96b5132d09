"""Append-only Merkle transparency log for publication, classification,
and appeal events.

Entries are signed canonical-JSON records stored in one append-only file
of length-prefixed frames, so the full state is recoverable by replay.
The tree follows standard transparency-log practice: inclusion proofs
show an entry is in a given root, consistency proofs show one root
extends another, and both verify against roots alone.
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidSignature

from . import merkle
from .canonical import canonical_json_bytes, is_hex_digest, now_timestamp
from .errors import ValidationFailure
from .signing import public_from_raw_b64, raw_public_b64

EVENT_TYPES = ("publication", "classification", "appeal")
LOG_SUBPATH = Path("out") / "translog" / "log.bin"
_FRAME = struct.Struct(">I")  # 4-byte big-endian length prefix


@dataclass(frozen=True)
class LogEntry:
    event_type: str
    bundle_root: str
    payload: dict
    signer_pubkey: str  # base64 raw Ed25519 public key
    signature: str  # base64, over the unsigned entry's canonical bytes
    timestamp: str

    def signed_content(self) -> dict:
        return {
            "event_type": self.event_type,
            "bundle_root": self.bundle_root,
            "payload": self.payload,
            "signer_pubkey": self.signer_pubkey,
            "timestamp": self.timestamp,
        }

    def to_dict(self) -> dict:
        content = self.signed_content()
        content["signature"] = self.signature
        return content

    def to_bytes(self) -> bytes:
        return canonical_json_bytes(self.to_dict())

    def verify_signature(self) -> bool:
        try:
            key = public_from_raw_b64(self.signer_pubkey)
            signature = base64.b64decode(self.signature, validate=True)
            key.verify(signature, canonical_json_bytes(self.signed_content()))
            return True
        except (InvalidSignature, ValidationFailure, ValueError):
            return False

    @classmethod
    def from_bytes(cls, data: bytes) -> "LogEntry":
        try:
            raw = json.loads(data)
            return cls(
                event_type=raw["event_type"],
                bundle_root=raw["bundle_root"],
                payload=raw["payload"],
                signer_pubkey=raw["signer_pubkey"],
                signature=raw["signature"],
                timestamp=raw["timestamp"],
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise ValidationFailure(f"malformed log entry: {exc}") from exc


def make_entry(
    event_type: str,
    bundle_root: str,
    payload: dict,
    private_key,
    timestamp: str | None = None,
) -> LogEntry:
    if event_type not in EVENT_TYPES:
        raise ValidationFailure(f"event_type must be one of {EVENT_TYPES}")
    if not is_hex_digest(bundle_root):
        raise ValidationFailure(f"bad bundle root: {bundle_root!r}")
    stamp = timestamp or now_timestamp()
    pubkey = raw_public_b64(private_key.public_key())
    unsigned = {
        "event_type": event_type,
        "bundle_root": bundle_root,
        "payload": payload,
        "signer_pubkey": pubkey,
        "timestamp": stamp,
    }
    signature = private_key.sign(canonical_json_bytes(unsigned))
    return LogEntry(
        event_type=event_type,
        bundle_root=bundle_root,
        payload=payload,
        signer_pubkey=pubkey,
        signature=base64.b64encode(signature).decode("ascii"),
        timestamp=stamp,
    )


@dataclass(frozen=True)
class LogState:
    tree_size: int
    root_hash: bytes


@dataclass(frozen=True)
class InclusionProof:
    index: int
    tree_size: int
    path: tuple[bytes, ...]

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "tree_size": self.tree_size,
            "path": [node.hex() for node in self.path],
        }


@dataclass(frozen=True)
class ConsistencyProof:
    old_size: int
    new_size: int
    path: tuple[bytes, ...]

    def to_dict(self) -> dict:
        return {
            "old_size": self.old_size,
            "new_size": self.new_size,
            "path": [node.hex() for node in self.path],
        }


class TransparencyLog:
    """Single-appender log over one length-prefixed record file.

    A partial trailing frame (crash during append) is detected at open
    and overwritten by the next append; complete frames are never touched.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._entry_bytes: list[bytes] = []
        self._entries: list[LogEntry] = []
        self._leaves: list[bytes] = []
        self._valid_length = 0
        if self.path.is_file():
            self._replay()

    def _replay(self) -> None:
        data = self.path.read_bytes()
        offset = 0
        while offset + _FRAME.size <= len(data):
            (length,) = _FRAME.unpack_from(data, offset)
            if offset + _FRAME.size + length > len(data):
                break  # incomplete trailing frame: ignore, truncate on append
            frame = data[offset + _FRAME.size : offset + _FRAME.size + length]
            self._entry_bytes.append(frame)
            self._entries.append(LogEntry.from_bytes(frame))
            self._leaves.append(merkle.leaf_hash(frame))
            offset += _FRAME.size + length
        self._valid_length = offset

    @property
    def size(self) -> int:
        return len(self._entries)

    def entry(self, index: int) -> LogEntry:
        self._check_index(index)
        return self._entries[index]

    def entry_bytes(self, index: int) -> bytes:
        self._check_index(index)
        return self._entry_bytes[index]

    def _check_index(self, index: int) -> None:
        if not 0 <= index < self.size:
            raise ValidationFailure(
                f"log index {index} out of range (size {self.size})"
            )

    def root(self, tree_size: int | None = None) -> bytes:
        tree_size = self.size if tree_size is None else tree_size
        if not 0 <= tree_size <= self.size:
            raise ValidationFailure(f"tree size {tree_size} out of range")
        return merkle.root_from_leaf_hashes(self._leaves[:tree_size])

    def state(self) -> LogState:
        return LogState(tree_size=self.size, root_hash=self.root())

    def append(self, entry: LogEntry) -> LogState:
        """Validate, persist, and return the new state.

        Invalid entries are rejected and the log is unchanged: the
        signature must verify, and an appeal must reference an existing
        earlier classification entry.
        """
        if entry.event_type not in EVENT_TYPES:
            raise ValidationFailure(f"event_type must be one of {EVENT_TYPES}")
        if not is_hex_digest(entry.bundle_root):
            raise ValidationFailure("bundle_root is not a SHA-256 digest")
        if not entry.verify_signature():
            raise ValidationFailure("log entry signature does not verify")
        if entry.event_type == "appeal":
            ref = entry.payload.get("ref_index") if isinstance(entry.payload, dict) else None
            if not isinstance(ref, int) or not 0 <= ref < self.size:
                raise ValidationFailure(
                    f"appeal references entry {ref!r}, which does not exist"
                )
            if self._entries[ref].event_type != "classification":
                raise ValidationFailure(
                    f"appeal must reference a classification entry, not "
                    f"{self._entries[ref].event_type!r}"
                )

        frame = entry.to_bytes()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "ab") as handle:
            if handle.tell() != self._valid_length:
                handle.seek(self._valid_length)
                handle.truncate()
            handle.write(_FRAME.pack(len(frame)))
            handle.write(frame)
            handle.flush()
        self._valid_length += _FRAME.size + len(frame)
        self._entry_bytes.append(frame)
        self._entries.append(entry)
        self._leaves.append(merkle.leaf_hash(frame))
        return self.state()

    def prove_inclusion(self, index: int, tree_size: int | None = None) -> InclusionProof:
        tree_size = self.size if tree_size is None else tree_size
        if not 0 <= index < tree_size <= self.size:
            raise ValidationFailure(
                f"cannot prove inclusion of {index} in tree of {tree_size}"
            )
        path = merkle.inclusion_path(index, self._leaves[:tree_size])
        return InclusionProof(index=index, tree_size=tree_size, path=tuple(path))

    def prove_consistency(
        self, old_size: int, new_size: int | None = None
    ) -> ConsistencyProof:
        new_size = self.size if new_size is None else new_size
        if not 0 < old_size <= new_size <= self.size:
            raise ValidationFailure(
                f"consistency sizes out of range: {old_size} -> {new_size}"
            )
        path = merkle.consistency_path(old_size, self._leaves[:new_size])
        return ConsistencyProof(
            old_size=old_size, new_size=new_size, path=tuple(path)
        )


def verify_inclusion(entry_bytes: bytes, proof: InclusionProof, root: bytes) -> bool:
    return merkle.verify_inclusion_path(
        merkle.leaf_hash(entry_bytes),
        proof.index,
        proof.tree_size,
        list(proof.path),
        root,
    )


def verify_consistency(
    old_root: bytes, new_root: bytes, proof: ConsistencyProof
) -> bool:
    return merkle.verify_consistency_path(
        proof.old_size, proof.new_size, old_root, new_root, list(proof.path)
    )


def project_log(project_root) -> TransparencyLog:
    return TransparencyLog(Path(project_root) / LOG_SUBPATH)
