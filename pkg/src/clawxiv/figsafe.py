"""Content-safety gate for figures.

Two checkpoints: ingestion (fig_add) and pre-publication re-check
(recheck_all). Vector formats and small or extreme-aspect rasters are
exempt as non-photographic research figures; photographic rasters are
checked against a perceptual-hash list. Until a real provider is
integrated the stub refuses every photographic raster outright, and every
refusal is logged. There is no code path that passes a photographic
figure under the stub.
"""

from __future__ import annotations

import enum
import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

from PIL import Image

from .canonical import canonical_json_bytes, is_hex64bit, now_timestamp
from .errors import ProviderUnavailable, SafetyRefusal, ValidationFailure
from .locks import project_lock

PROVIDER_ENV = "CLAWXIV_SAFETY_PROVIDER"
HASH_LIST_ENV = "CLAWXIV_SAFETY_LIST"
REFUSAL_LOG_NAME = "safety-refusals.log"
REPORT_DIR_NAME = "safety-reports"

VECTOR_EXTENSIONS = frozenset({"svg", "pdf", "eps", "emf", "wmf"})
RASTER_EXTENSIONS = frozenset({"png", "jpg", "jpeg", "gif", "webp", "tiff", "bmp"})

SMALL_RASTER_LIMIT = 200  # exempt only when strictly below on BOTH axes
EXTREME_ASPECT_RATIO = 5.0  # exempt only when strictly above


class UndecodableFigure(SafetyRefusal):
    """Raster that cannot be decoded. Callers must fail closed."""


class FigureClass(enum.Enum):
    VECTOR = "Vector"
    SMALL_RASTER = "SmallRaster"
    EXTREME_ASPECT = "ExtremeAspect"
    PHOTOGRAPHIC = "Photographic"


class Verdict(enum.Enum):
    PASS_EXEMPT = "PassExempt"
    PASS_PROVIDER = "PassProvider"
    REFUSED_STUB = "RefusedStub"
    MATCHED_HASH_LIST = "MatchedHashList"


@dataclass(frozen=True)
class SafetyVerdict:
    value: Verdict
    provider: str
    list_version: str = ""

    @property
    def passed(self) -> bool:
        return self.value in (Verdict.PASS_EXEMPT, Verdict.PASS_PROVIDER)

    @property
    def terminal(self) -> bool:
        """Terminal verdicts bar the figure from any publishable bundle."""
        return not self.passed

    def to_dict(self) -> dict:
        return {
            "value": self.value.value,
            "provider": self.provider,
            "list_version": self.list_version,
        }


@dataclass(frozen=True)
class FigureSidecar:
    figure_name: str
    added_at: str
    source_description: str
    sha256: str
    width: int
    height: int
    figure_class: FigureClass
    verdict: SafetyVerdict

    def to_dict(self) -> dict:
        return {
            "figure_name": self.figure_name,
            "added_at": self.added_at,
            "source_description": self.source_description,
            "sha256": self.sha256,
            "width": self.width,
            "height": self.height,
            "figure_class": self.figure_class.value,
            "verdict": self.verdict.to_dict(),
        }


def sidecar_path_for(figure_path: Path) -> Path:
    return figure_path.with_suffix(".json")


# --- perceptual hash --------------------------------------------------------

def dhash64(image: Image.Image) -> int:
    """64-bit difference hash: 9x8 grayscale downsample, row-major bits,
    bit set when the right-hand pixel is brighter than its left neighbour."""
    small = image.convert("L").resize((9, 8), Image.Resampling.LANCZOS)
    pixels = small.tobytes()  # row-major bytes for mode "L"
    value = 0
    for row in range(8):
        for col in range(8):
            left = pixels[row * 9 + col]
            right = pixels[row * 9 + col + 1]
            value = (value << 1) | (1 if right > left else 0)
    return value


def dhash_hex(path) -> str:
    with Image.open(path) as image:
        return f"{dhash64(image):016x}"


# --- providers ---------------------------------------------------------------

class HashListProvider:
    """Perceptual-hash list lookup, loaded from a local file.

    Stands in for a production provider client; the interface (name,
    list_version, contains) is what a real integration must supply.
    """

    def __init__(self, list_path, name: str = "mock"):
        self.name = name
        try:
            raw = Path(list_path).read_bytes()
        except (OSError, TypeError) as exc:
            raise ProviderUnavailable(
                f"safety provider {name!r} unreachable: {exc}"
            ) from exc
        self.list_version = hashlib.sha256(raw).hexdigest()[:12]
        self._hashes = set()
        for line in raw.decode("utf-8", errors="replace").splitlines():
            line = line.strip().lower()
            if not line or line.startswith("#"):
                continue
            if not is_hex64bit(line):
                raise ProviderUnavailable(
                    f"safety provider {name!r}: bad hash-list line {line!r}"
                )
            self._hashes.add(line)

    def contains(self, phash: str) -> bool:
        return phash in self._hashes


def resolve_provider(provider=None):
    """Map a provider selector to None (stub) or a provider instance."""
    if provider is None:
        provider = os.environ.get(PROVIDER_ENV, "stub")
    if provider == "stub":
        return None
    if provider == "mock":
        list_path = os.environ.get(HASH_LIST_ENV)
        if not list_path:
            raise ProviderUnavailable(
                f"safety provider 'mock' selected but {HASH_LIST_ENV} is unset"
            )
        return HashListProvider(list_path)
    if isinstance(provider, str):
        raise ProviderUnavailable(f"unknown safety provider {provider!r}")
    return provider


# --- classification and checking ---------------------------------------------

def probe_dimensions(path) -> tuple[int, int]:
    try:
        with Image.open(path) as image:
            return image.size
    except Exception as exc:
        raise UndecodableFigure(f"cannot decode raster {path}: {exc}") from exc


def classify_figure(path) -> FigureClass:
    path = Path(path)
    ext = path.suffix.lower().lstrip(".")
    if ext in VECTOR_EXTENSIONS:
        return FigureClass.VECTOR
    width, height = probe_dimensions(path)
    if width < SMALL_RASTER_LIMIT and height < SMALL_RASTER_LIMIT:
        return FigureClass.SMALL_RASTER
    if max(width, height) / min(width, height) > EXTREME_ASPECT_RATIO:
        return FigureClass.EXTREME_ASPECT
    return FigureClass.PHOTOGRAPHIC


def _log_refusal(refusal_log, path: Path, verdict: SafetyVerdict) -> None:
    if refusal_log is None:
        return
    refusal_log = Path(refusal_log)
    refusal_log.parent.mkdir(parents=True, exist_ok=True)
    sha = hashlib.sha256(path.read_bytes()).hexdigest()
    line = f"{now_timestamp()}\t{sha}\t{path}\t{verdict.value.value}\n"
    with open(refusal_log, "a", encoding="utf-8") as handle:
        handle.write(line)


def _provider_name(provider) -> str:
    if provider is None:
        provider = os.environ.get(PROVIDER_ENV, "stub")
    return provider if isinstance(provider, str) else provider.name


def safety_check(path, provider=None, refusal_log=None) -> SafetyVerdict:
    """Classify, then check photographic rasters against the provider.

    Under the stub every photographic raster is refused. A refusal appends
    exactly one line (timestamp, sha256, path, verdict) to the refusal log
    when one is configured. The provider is only consulted (and only needs
    to be reachable) for photographic rasters.
    """
    path = Path(path)
    figure_class = classify_figure(path)
    if figure_class is not FigureClass.PHOTOGRAPHIC:
        return SafetyVerdict(Verdict.PASS_EXEMPT, provider=_provider_name(provider))
    resolved = resolve_provider(provider)
    if resolved is None:
        verdict = SafetyVerdict(Verdict.REFUSED_STUB, provider="stub")
        _log_refusal(refusal_log, path, verdict)
        return verdict
    if resolved.contains(dhash_hex(path)):
        verdict = SafetyVerdict(
            Verdict.MATCHED_HASH_LIST,
            provider=resolved.name,
            list_version=resolved.list_version,
        )
        _log_refusal(refusal_log, path, verdict)
        return verdict
    return SafetyVerdict(
        Verdict.PASS_PROVIDER,
        provider=resolved.name,
        list_version=resolved.list_version,
    )


# --- ingestion and re-check ----------------------------------------------------

def _figure_dimensions(path: Path, figure_class: FigureClass) -> tuple[int, int]:
    if figure_class is FigureClass.VECTOR:
        return 0, 0
    return probe_dimensions(path)


def fig_add(project_root, file, source_description: str = "", provider=None) -> Path:
    """Safety-check a figure, copy it into src/fig/, write its sidecar.

    Refused figures are never copied. Re-adding a byte-identical figure is
    a no-op that keeps the original sidecar.
    """
    project_root = Path(project_root)
    source = Path(file)
    if not source.is_file():
        raise ValidationFailure(f"figure does not exist: {source}")
    fig_dir = project_root / "src" / "fig"
    if not fig_dir.is_dir():
        raise ValidationFailure(f"not a project (missing src/fig): {project_root}")

    with project_lock(project_root):
        dest = fig_dir / source.name
        sidecar = sidecar_path_for(dest)
        data = source.read_bytes()
        if dest.exists():
            if dest.read_bytes() != data:
                raise ValidationFailure(
                    f"figure name collision with different bytes: {dest.name}"
                )
            if sidecar.exists():
                return sidecar
        elif sidecar.exists():
            raise ValidationFailure(
                f"sidecar name collision: {sidecar.name} already exists"
            )

        out_dir = project_root / "out"
        out_dir.mkdir(exist_ok=True)
        verdict = safety_check(
            source, provider=provider, refusal_log=out_dir / REFUSAL_LOG_NAME
        )
        if verdict.terminal:
            raise SafetyRefusal(
                f"figure refused ({verdict.value.value}): {source.name}"
            )
        figure_class = classify_figure(source)
        width, height = _figure_dimensions(source, figure_class)
        if not dest.exists():
            dest.write_bytes(data)
        record = FigureSidecar(
            figure_name=dest.name,
            added_at=now_timestamp(),
            source_description=source_description,
            sha256=hashlib.sha256(data).hexdigest(),
            width=width,
            height=height,
            figure_class=figure_class,
            verdict=verdict,
        )
        sidecar.write_bytes(canonical_json_bytes(record.to_dict()))
        return sidecar


@dataclass(frozen=True)
class RecheckEntry:
    path: str
    verdict: SafetyVerdict | None
    error: str = ""

    @property
    def blocking(self) -> bool:
        return self.verdict is None or self.verdict.terminal


@dataclass
class RecheckReport:
    entries: list[RecheckEntry]
    report_files: list[Path]

    @property
    def blocking(self) -> bool:
        return any(entry.blocking for entry in self.entries)


_UNSET = object()


def recheck_all(
    target_root, provider=None, refusal_log=_UNSET, report_dir=_UNSET
) -> RecheckReport:
    """Re-run the safety check on every non-sidecar file in src/fig/.

    Covers files that bypassed ingestion by being placed there directly.
    A MatchedHashList additionally writes a report record for the
    configured reporting endpoint (a local file sink here). Sealed bundle
    directories are never written into: with no out/ directory present,
    logging and reporting are skipped.
    """
    target_root = Path(target_root)
    out_dir = target_root / "out"
    if refusal_log is _UNSET:
        refusal_log = out_dir / REFUSAL_LOG_NAME if out_dir.is_dir() else None
    if report_dir is _UNSET:
        report_dir = out_dir / REPORT_DIR_NAME if out_dir.is_dir() else None

    fig_dir = target_root / "src" / "fig"
    entries: list[RecheckEntry] = []
    report_files: list[Path] = []
    if not fig_dir.is_dir():
        return RecheckReport(entries=entries, report_files=report_files)

    for figure in sorted(fig_dir.iterdir(), key=lambda p: p.name):
        if not figure.is_file() or figure.suffix.lower() == ".json":
            continue
        rel = figure.relative_to(target_root).as_posix()
        try:
            verdict = safety_check(figure, provider=provider, refusal_log=refusal_log)
        except SafetyRefusal as exc:  # undecodable: fail closed
            entries.append(RecheckEntry(path=rel, verdict=None, error=str(exc)))
            continue
        entries.append(RecheckEntry(path=rel, verdict=verdict))
        if verdict.value is Verdict.MATCHED_HASH_LIST and report_dir is not None:
            report_dir = Path(report_dir)
            report_dir.mkdir(parents=True, exist_ok=True)
            sha = hashlib.sha256(figure.read_bytes()).hexdigest()
            report_path = report_dir / f"{sha}.json"
            report_path.write_bytes(
                canonical_json_bytes(
                    {
                        "figure": rel,
                        "sha256": sha,
                        "provider": verdict.provider,
                        "list_version": verdict.list_version,
                        "observed_at": now_timestamp(),
                    }
                )
            )
            report_files.append(report_path)
    return RecheckReport(entries=entries, report_files=report_files)
