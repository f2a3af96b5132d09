"""Normalized project directory: layout, metadata, seed import.

A project is the mutable unit of ongoing work: src/ with the source tree,
src/fig/ with sidecar-carrying figures, src/bin/ for utility scripts,
keys/ with author public keys, out/ for derived artifacts, plus
project.yaml and an append-only import log.

project.yaml is deliberately flat: scalar values and string lists only,
one level deep, so any minimal YAML parser can read it.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .canonical import is_hex_digest, now_timestamp
from .errors import SafetyRefusal, ValidationFailure
from .figsafe import RASTER_EXTENSIONS, VECTOR_EXTENSIONS, fig_add, sidecar_path_for
from .locks import project_lock
from .signing import slugify

PROJECT_FILE = "project.yaml"
IMPORT_LOG = "import.log"
REQUIRED_DIRS = ("src", "src/fig", "src/bin", "keys", "out")

FIGURE_EXTENSIONS = RASTER_EXTENSIONS | (VECTOR_EXTENSIONS - {"pdf"})
_FIG_DIR_NAMES = frozenset({"fig", "figs", "figure", "figures"})

DEFAULT_STAMP_DURATION_DAYS = 730  # two-year storage prepayment default

_VERSION_RE = re.compile(r"^v([1-9][0-9]*)(?:\.rc([1-9][0-9]*))?$")


@dataclass(frozen=True)
class VersionLabel:
    major: int
    rc: int | None = None

    def render(self) -> str:
        if self.rc is None:
            return f"v{self.major}"
        return f"v{self.major}.rc{self.rc}"

    @property
    def is_rc(self) -> bool:
        return self.rc is not None


def parse_version_label(text: str) -> VersionLabel:
    match = _VERSION_RE.match(text if isinstance(text, str) else "")
    if not match:
        raise ValidationFailure(
            f"bad version label {text!r}: expected vN or vN.rcM"
        )
    rc = match.group(2)
    return VersionLabel(major=int(match.group(1)), rc=int(rc) if rc else None)


@dataclass
class ProjectMetadata:
    title: str = "untitled"
    version_label: VersionLabel = field(default_factory=lambda: VersionLabel(1))
    authors: list[str] = field(default_factory=list)  # "Name:kind:responsibility"
    licenses: list[str] = field(default_factory=lambda: ["CC0-1.0"])
    tags: list[str] = field(default_factory=list)
    push_targets: list[str] = field(default_factory=list)
    bundle_root: str | None = None
    ipfs_cid: str | None = None
    arxiv_id: str | None = None
    swarm_hash: str | None = None
    stamp_duration_days: int = DEFAULT_STAMP_DURATION_DAYS

    def validate(self) -> list[str]:
        problems = []
        for name, value in (
            ("bundle_root", self.bundle_root),
            ("swarm_hash", self.swarm_hash),
        ):
            if value is not None and not is_hex_digest(value):
                problems.append(f"{name}: not 64 lowercase hex characters")
        if not isinstance(self.stamp_duration_days, int) or self.stamp_duration_days <= 0:
            problems.append("stamp_duration_days: must be a positive integer")
        for ref in self.authors:
            try:
                parse_author_ref(ref)
            except ValidationFailure as exc:
                problems.append(str(exc))
        return problems


def parse_author_ref(ref: str) -> tuple[str, str, str]:
    """'Name:kind:responsibility'; kind and responsibility may be omitted."""
    parts = ref.split(":")
    name = parts[0].strip()
    kind = parts[1].strip() if len(parts) > 1 else "human"
    responsibility = parts[2].strip() if len(parts) > 2 else "contributor"
    if not name or len(parts) > 3:
        raise ValidationFailure(f"bad author reference {ref!r}")
    if kind not in ("human", "ai", "organizational"):
        raise ValidationFailure(f"bad author kind in {ref!r}")
    if responsibility not in ("corresponding", "contributor"):
        raise ValidationFailure(f"bad author responsibility in {ref!r}")
    return name, kind, responsibility


# --- project.yaml ------------------------------------------------------------

_LIST_KEYS = ("authors", "licenses", "tags", "push_targets")
_SCALAR_KEYS = (
    "title",
    "version_label",
    "bundle_root",
    "ipfs_cid",
    "arxiv_id",
    "swarm_hash",
    "stamp_duration_days",
)


def _emit_yaml(metadata: ProjectMetadata) -> str:
    lines = []

    def scalar(key, value):
        if value is None:
            return
        if isinstance(value, int):
            lines.append(f"{key}: {value}")
        else:
            lines.append(f"{key}: {json.dumps(str(value), ensure_ascii=False)}")

    scalar("title", metadata.title)
    scalar("version_label", metadata.version_label.render())
    for key in _LIST_KEYS:
        values = getattr(metadata, key)
        lines.append(f"{key}:")
        for item in values:
            lines.append(f"  - {json.dumps(str(item), ensure_ascii=False)}")
    scalar("bundle_root", metadata.bundle_root)
    scalar("ipfs_cid", metadata.ipfs_cid)
    scalar("arxiv_id", metadata.arxiv_id)
    scalar("swarm_hash", metadata.swarm_hash)
    scalar("stamp_duration_days", metadata.stamp_duration_days)
    return "\n".join(lines) + "\n"


def save_metadata(project_root, metadata: ProjectMetadata) -> Path:
    problems = metadata.validate()
    if problems:
        raise ValidationFailure("invalid project metadata: " + "; ".join(problems))
    path = Path(project_root) / PROJECT_FILE
    path.write_text(_emit_yaml(metadata), encoding="utf-8")
    return path


def load_metadata(project_root) -> ProjectMetadata:
    path = Path(project_root) / PROJECT_FILE
    if not path.is_file():
        raise ValidationFailure(f"missing {PROJECT_FILE} in {project_root}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ValidationFailure(f"unparseable {PROJECT_FILE}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationFailure(f"{PROJECT_FILE} is not a key/value document")

    def str_list(key):
        value = raw.get(key, [])
        if value is None:
            return []
        if not isinstance(value, list):
            raise ValidationFailure(f"{PROJECT_FILE}: {key} must be a list")
        return [str(item) for item in value]

    metadata = ProjectMetadata(
        title=str(raw.get("title", "untitled")),
        version_label=parse_version_label(str(raw.get("version_label", "v1"))),
        authors=str_list("authors"),
        licenses=str_list("licenses"),
        tags=str_list("tags"),
        push_targets=str_list("push_targets"),
        bundle_root=raw.get("bundle_root"),
        ipfs_cid=raw.get("ipfs_cid"),
        arxiv_id=raw.get("arxiv_id"),
        swarm_hash=raw.get("swarm_hash"),
        stamp_duration_days=int(raw.get("stamp_duration_days", DEFAULT_STAMP_DURATION_DAYS)),
    )
    problems = metadata.validate()
    if problems:
        raise ValidationFailure(f"invalid {PROJECT_FILE}: " + "; ".join(problems))
    return metadata


def author_display_names(project_root) -> list[str]:
    return [parse_author_ref(ref)[0] for ref in load_metadata(project_root).authors]


def author_key_path(project_root, display_name: str) -> Path:
    return Path(project_root) / "keys" / f"{slugify(display_name)}.pem"


# --- import log ----------------------------------------------------------------

@dataclass(frozen=True)
class ImportLogEntry:
    timestamp: str
    action: str
    source: str
    destination: str


class ImportLog:
    """Append-only text log: ISO timestamp, tab, action, tab, source, tab, dest."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, action: str, source: str, destination: str) -> None:
        timestamp = now_timestamp()
        last = self._last_timestamp()
        if last is not None and timestamp < last:
            timestamp = last  # keep timestamps non-decreasing
        with open(self.path, "a", encoding="utf-8") as handle:
            handle.write(f"{timestamp}\t{action}\t{source}\t{destination}\n")

    def _last_timestamp(self) -> str | None:
        entries = self.entries()
        return entries[-1].timestamp if entries else None

    def entries(self) -> list[ImportLogEntry]:
        if not self.path.is_file():
            return []
        out = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ValidationFailure(f"corrupt import log line: {line!r}")
            out.append(ImportLogEntry(*fields))
        return out


# --- project handle and operations ----------------------------------------------

class Project:
    def __init__(self, root):
        self.root = Path(root)

    def __fspath__(self) -> str:
        return str(self.root)

    @property
    def src_dir(self) -> Path:
        return self.root / "src"

    @property
    def fig_dir(self) -> Path:
        return self.root / "src" / "fig"

    @property
    def out_dir(self) -> Path:
        return self.root / "out"

    @property
    def keys_dir(self) -> Path:
        return self.root / "keys"

    @property
    def import_log(self) -> ImportLog:
        return ImportLog(self.root / IMPORT_LOG)

    @property
    def metadata(self) -> ProjectMetadata:
        return load_metadata(self.root)


def _is_figure(rel_posix: str) -> bool:
    name = rel_posix.rsplit("/", 1)[-1]
    ext = name.rsplit(".", 1)[-1].lower() if "." in name else ""
    if ext in FIGURE_EXTENSIONS:
        return True
    if ext == "pdf":
        parents = rel_posix.lower().split("/")[:-1]
        return any(part in _FIG_DIR_NAMES for part in parents)
    return False


def _walk_seed(seed_dir: Path) -> list[Path]:
    files = []
    for path in sorted(seed_dir.rglob("*")):
        rel = path.relative_to(seed_dir).as_posix()
        if path.is_symlink():
            raise ValidationFailure(
                f"symlink refused (bundles must be self-contained): {rel}"
            )
        if path.is_file():
            files.append(path)
        elif not path.is_dir():
            raise ValidationFailure(f"not a regular file: {rel}")
    return files


def import_seed(seed_dir, dest, metadata_seed=None, provider=None) -> Project:
    """Transform a working seed into a normalized project directory.

    Copy-based: the seed is never modified, so a failed import leaves it
    intact. Figures are routed through the safety gate; a refused figure
    aborts the import after the refusal has been logged, leaving the
    partial project and its import log as the audit trail.
    """
    seed_dir = Path(seed_dir)
    dest = Path(dest)
    if not seed_dir.is_dir():
        raise ValidationFailure(f"seed directory does not exist: {seed_dir}")
    if dest.exists() and any(dest.iterdir()):
        raise ValidationFailure(f"destination is not empty: {dest}")
    dest.mkdir(parents=True, exist_ok=True)

    with project_lock(dest):
        log = ImportLog(dest / IMPORT_LOG)
        for sub in REQUIRED_DIRS:
            (dest / sub).mkdir(parents=True, exist_ok=True)
            log.append("mkdir", "-", sub)

        seed_files = _walk_seed(seed_dir)
        figures = []
        for path in seed_files:
            rel = path.relative_to(seed_dir).as_posix()
            if _is_figure(rel):
                figures.append((path, rel))
                continue
            target = dest / "src" / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(path.read_bytes())
            log.append("copy", rel, f"src/{rel}")

        if isinstance(metadata_seed, ProjectMetadata):
            metadata = metadata_seed
        else:
            metadata = ProjectMetadata(title=seed_dir.name)
            for key, value in (metadata_seed or {}).items():
                if key == "version_label" and isinstance(value, str):
                    value = parse_version_label(value)
                setattr(metadata, key, value)
        save_metadata(dest, metadata)
        log.append("write", "-", PROJECT_FILE)

        for path, rel in figures:
            try:
                fig_add(
                    dest,
                    path,
                    source_description=f"imported from seed:{rel}",
                    provider=provider,
                )
            except SafetyRefusal:
                log.append("refuse", rel, "-")
                raise
            log.append("fig-add", rel, f"src/fig/{path.name}")

    return Project(dest)


def validate_project(project_root) -> list[str]:
    """Violations list; empty when the directory is a well-formed project."""
    root = Path(project_root)
    violations = []
    if not root.is_dir():
        return [f"project directory missing: {root}"]
    for sub in REQUIRED_DIRS:
        if not (root / sub).is_dir():
            violations.append(f"missing directory: {sub}/")
    if not (root / PROJECT_FILE).is_file():
        violations.append(f"missing {PROJECT_FILE}")
    else:
        try:
            load_metadata(root)
        except ValidationFailure as exc:
            violations.append(str(exc))
    fig_dir = root / "src" / "fig"
    if fig_dir.is_dir():
        for figure in sorted(fig_dir.iterdir()):
            if not figure.is_file() or figure.suffix.lower() == ".json":
                continue
            if not sidecar_path_for(figure).is_file():
                violations.append(
                    f"figure without sidecar: src/fig/{figure.name}"
                )
    return violations


def record_publication_ids(
    project_root,
    swarm_hash: str | None = None,
    ipfs_cid: str | None = None,
    arxiv_id: str | None = None,
    force: bool = False,
) -> ProjectMetadata:
    """Write returned publication identifiers into project.yaml.

    Existing values may only be replaced under force; writing the same
    value again is a no-op.
    """
    if swarm_hash is not None and not is_hex_digest(swarm_hash):
        raise ValidationFailure(f"malformed swarm hash: {swarm_hash!r}")
    root = Path(project_root)
    with project_lock(root):
        metadata = load_metadata(root)
        for name, value in (
            ("swarm_hash", swarm_hash),
            ("ipfs_cid", ipfs_cid),
            ("arxiv_id", arxiv_id),
        ):
            if value is None:
                continue
            current = getattr(metadata, name)
            if current is not None and current != value and not force:
                raise ValidationFailure(
                    f"{name} already recorded as {current!r}; use force to overwrite"
                )
            setattr(metadata, name, value)
        save_metadata(root, metadata)
    return metadata
