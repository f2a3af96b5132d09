from __future__ import annotations

import hashlib
import json

import pytest
from PIL import Image

from clawxiv import figsafe
from clawxiv.errors import ProviderUnavailable, SafetyRefusal, ValidationFailure
from clawxiv.figsafe import FigureClass, Verdict

from conftest import make_image


# --- classification ---------------------------------------------------------

@pytest.mark.parametrize("ext", ["svg", "pdf", "eps", "emf", "wmf", "SVG", "Pdf"])
def test_vector_extensions_classify_vector(tmp_path, ext):
    path = tmp_path / f"figure.{ext}"
    path.write_bytes(b"<not actually parsed>")
    assert figsafe.classify_figure(path) is FigureClass.VECTOR


def test_vector_detection_ignores_content(tmp_path):
    """Exemption is by extension: an SVG containing raster-looking bytes is
    still Vector."""
    raster = tmp_path / "real.png"
    make_image(raster, 640, 480)
    crafted = tmp_path / "crafted.svg"
    crafted.write_bytes(raster.read_bytes())
    assert figsafe.classify_figure(crafted) is FigureClass.VECTOR


@pytest.mark.parametrize(
    "width,height,expected",
    [
        (150, 150, FigureClass.SMALL_RASTER),
        (199, 199, FigureClass.SMALL_RASTER),
        (200, 200, FigureClass.PHOTOGRAPHIC),  # not strictly smaller
        (199, 200, FigureClass.PHOTOGRAPHIC),  # small on one axis only
        (1200, 150, FigureClass.EXTREME_ASPECT),  # ratio 8
        (150, 1200, FigureClass.EXTREME_ASPECT),  # orientation symmetric
        (1000, 200, FigureClass.PHOTOGRAPHIC),  # ratio exactly 5
        (1001, 200, FigureClass.EXTREME_ASPECT),  # ratio 5.005
        (640, 480, FigureClass.PHOTOGRAPHIC),
    ],
)
def test_raster_thresholds(tmp_path, width, height, expected):
    path = make_image(tmp_path / f"r{width}x{height}.png", width, height)
    assert figsafe.classify_figure(path) is expected


def test_undecodable_raster_raises_refusal(tmp_path):
    path = tmp_path / "broken.png"
    path.write_bytes(b"this is not a png")
    with pytest.raises(figsafe.UndecodableFigure):
        figsafe.classify_figure(path)
    assert isinstance(figsafe.UndecodableFigure("x"), SafetyRefusal)


# --- perceptual hash ----------------------------------------------------------

def test_dhash_pinned_bit_convention():
    # 9x8 input: resize is identity; increasing gradient rightwards means
    # every right neighbour is brighter, so all 64 bits are set.
    rising = Image.frombytes(
        "L", (9, 8), bytes(x * 20 for _ in range(8) for x in range(9))
    )
    assert figsafe.dhash64(rising) == 0xFFFFFFFFFFFFFFFF

    falling = Image.frombytes(
        "L", (9, 8), bytes((8 - x) * 20 for _ in range(8) for x in range(9))
    )
    assert figsafe.dhash64(falling) == 0

    flat = Image.new("L", (9, 8), 77)  # equal is not brighter
    assert figsafe.dhash64(flat) == 0


def test_dhash_hex_is_16_chars(tmp_path):
    path = make_image(tmp_path / "img.png", 640, 480, color=(1, 2, 3))
    value = figsafe.dhash_hex(path)
    assert len(value) == 16
    assert int(value, 16) >= 0


# --- safety_check ---------------------------------------------------------------

def test_stub_passes_exempt_without_logging(tmp_path):
    diagram = tmp_path / "diagram.svg"
    diagram.write_text("<svg/>")
    log = tmp_path / "refusals.log"
    verdict = figsafe.safety_check(diagram, provider="stub", refusal_log=log)
    assert verdict.value is Verdict.PASS_EXEMPT
    assert verdict.provider == "stub"
    assert not log.exists()


def test_stub_refuses_photographic_and_logs_once(tmp_path):
    photo = make_image(tmp_path / "photo_640x480.jpg", 640, 480)
    log = tmp_path / "refusals.log"
    verdict = figsafe.safety_check(photo, provider="stub", refusal_log=log)
    assert verdict.value is Verdict.REFUSED_STUB
    assert verdict.terminal
    lines = log.read_text().splitlines()
    assert len(lines) == 1
    assert hashlib.sha256(photo.read_bytes()).hexdigest() in lines[0]


def test_mock_provider_matches_enlisted_hash(tmp_path, monkeypatch):
    photo = make_image(tmp_path / "photo.jpg", 640, 480, color=(200, 10, 10))
    listed = figsafe.dhash_hex(photo)
    list_file = tmp_path / "hashes.txt"
    list_file.write_text(f"# test list\n{listed}\n")
    monkeypatch.setenv(figsafe.HASH_LIST_ENV, str(list_file))

    log = tmp_path / "refusals.log"
    verdict = figsafe.safety_check(photo, provider="mock", refusal_log=log)
    assert verdict.value is Verdict.MATCHED_HASH_LIST
    assert verdict.provider == "mock"
    assert verdict.list_version != ""
    assert len(log.read_text().splitlines()) == 1


def test_mock_provider_passes_unlisted(tmp_path, monkeypatch):
    photo = make_image(tmp_path / "photo.jpg", 640, 480, color=(10, 200, 10))
    list_file = tmp_path / "hashes.txt"
    # a flat image's dhash is all zeros; list something it cannot match
    list_file.write_text("ffffffffffffffff\n")
    monkeypatch.setenv(figsafe.HASH_LIST_ENV, str(list_file))
    verdict = figsafe.safety_check(photo, provider="mock")
    assert verdict.value is Verdict.PASS_PROVIDER
    assert verdict.list_version != ""


def test_provider_unreachable_is_an_error_not_a_verdict(tmp_path, monkeypatch):
    photo = make_image(tmp_path / "photo.jpg", 640, 480)
    monkeypatch.delenv(figsafe.HASH_LIST_ENV, raising=False)
    with pytest.raises(ProviderUnavailable):
        figsafe.safety_check(photo, provider="mock")
    with pytest.raises(ProviderUnavailable):
        figsafe.safety_check(photo, provider="no-such-provider")


def test_exempt_figures_do_not_need_the_provider(tmp_path, monkeypatch):
    """Exemption is classification-only: a misconfigured provider must not
    block vector or small figures."""
    monkeypatch.delenv(figsafe.HASH_LIST_ENV, raising=False)
    svg = tmp_path / "d.svg"
    svg.write_text("<svg/>")
    verdict = figsafe.safety_check(svg, provider="mock")
    assert verdict.value is Verdict.PASS_EXEMPT
    assert verdict.provider == "mock"


def test_provider_resolution_from_env(tmp_path, monkeypatch):
    photo = make_image(tmp_path / "photo.jpg", 640, 480)
    monkeypatch.setenv(figsafe.PROVIDER_ENV, "stub")
    assert figsafe.safety_check(photo).value is Verdict.REFUSED_STUB


def test_no_stub_pass_for_photographic(tmp_path):
    """Fail closed: no photographic raster passes under the stub."""
    for size in [(200, 200), (640, 480), (1000, 200)]:
        photo = make_image(tmp_path / f"p{size[0]}x{size[1]}.png", *size)
        verdict = figsafe.safety_check(photo, provider="stub")
        assert verdict.terminal


# --- fig_add -----------------------------------------------------------------------

def test_fig_add_exempt_writes_figure_and_sidecar(project_dir):
    svg = project_dir.root.parent / "plot.svg"
    svg.write_text("<svg><rect/></svg>")
    sidecar = figsafe.fig_add(project_dir.root, svg, source_description="test plot")
    assert (project_dir.fig_dir / "plot.svg").exists()
    record = json.loads(sidecar.read_bytes())
    assert record["verdict"]["value"] == "PassExempt"
    assert record["figure_class"] == "Vector"
    assert record["width"] == 0 and record["height"] == 0
    assert record["sha256"] == hashlib.sha256(svg.read_bytes()).hexdigest()
    assert record["source_description"] == "test plot"


def test_fig_add_identical_readd_is_idempotent(project_dir):
    svg = project_dir.root.parent / "plot.svg"
    svg.write_text("<svg/>")
    first = figsafe.fig_add(project_dir.root, svg)
    before = first.read_bytes()
    second = figsafe.fig_add(project_dir.root, svg)
    assert second == first
    assert second.read_bytes() == before


def test_fig_add_collision_with_different_bytes(project_dir):
    svg = project_dir.root.parent / "plot.svg"
    svg.write_text("<svg/>")
    figsafe.fig_add(project_dir.root, svg)
    other = project_dir.root.parent / "other" / "plot.svg"
    other.parent.mkdir()
    other.write_text("<svg>different</svg>")
    with pytest.raises(ValidationFailure, match="collision"):
        figsafe.fig_add(project_dir.root, other)


def test_fig_add_sidecar_stem_collision(project_dir):
    svg = project_dir.root.parent / "plot.svg"
    svg.write_text("<svg/>")
    figsafe.fig_add(project_dir.root, svg)
    png = make_image(project_dir.root.parent / "plot.png", 100, 100)
    with pytest.raises(ValidationFailure, match="collision"):
        figsafe.fig_add(project_dir.root, png)


def test_fig_add_refusal_copies_nothing_logs_once(project_dir):
    photo = make_image(project_dir.root.parent / "photo.jpg", 640, 480)
    with pytest.raises(SafetyRefusal):
        figsafe.fig_add(project_dir.root, photo)
    assert not (project_dir.fig_dir / "photo.jpg").exists()
    assert not (project_dir.fig_dir / "photo.json").exists()
    log_lines = (
        (project_dir.out_dir / figsafe.REFUSAL_LOG_NAME).read_text().splitlines()
    )
    assert len(log_lines) == 1
    assert hashlib.sha256(photo.read_bytes()).hexdigest() in log_lines[0]


def test_fig_add_small_raster_records_dimensions(project_dir):
    small = make_image(project_dir.root.parent / "tiny.png", 150, 120)
    sidecar = figsafe.fig_add(project_dir.root, small)
    record = json.loads(sidecar.read_bytes())
    assert record["figure_class"] == "SmallRaster"
    assert (record["width"], record["height"]) == (150, 120)


# --- recheck_all ---------------------------------------------------------------------

def test_recheck_exempt_only_not_blocking(project_dir):
    svg = project_dir.root.parent / "plot.svg"
    svg.write_text("<svg/>")
    figsafe.fig_add(project_dir.root, svg)
    report = figsafe.recheck_all(project_dir.root)
    assert not report.blocking
    assert [e.path for e in report.entries] == ["src/fig/plot.svg"]


def test_recheck_empty_fig_dir_empty_report(project_dir):
    report = figsafe.recheck_all(project_dir.root)
    assert report.entries == []
    assert not report.blocking


def test_recheck_catches_bypassed_photographic(project_dir):
    # dropped straight into src/fig/, no sidecar, bypassing ingestion
    make_image(project_dir.fig_dir / "sneaky.png", 640, 480)
    report = figsafe.recheck_all(project_dir.root)
    assert report.blocking
    blocked = [e.path for e in report.entries if e.blocking]
    assert blocked == ["src/fig/sneaky.png"]


def test_recheck_undecodable_blocks(project_dir):
    (project_dir.fig_dir / "junk.png").write_bytes(b"not an image")
    report = figsafe.recheck_all(project_dir.root)
    assert report.blocking
    assert report.entries[0].verdict is None
    assert report.entries[0].error


def test_recheck_match_emits_report_record(project_dir, monkeypatch):
    photo = make_image(project_dir.fig_dir / "match.jpg", 640, 480, color=(9, 9, 9))
    list_file = project_dir.root.parent / "list.txt"
    list_file.write_text(figsafe.dhash_hex(photo) + "\n")
    monkeypatch.setenv(figsafe.HASH_LIST_ENV, str(list_file))

    report = figsafe.recheck_all(project_dir.root, provider="mock")
    assert report.blocking
    assert len(report.report_files) == 1
    record = json.loads(report.report_files[0].read_bytes())
    assert record["figure"] == "src/fig/match.jpg"
    assert record["provider"] == "mock"
    sha = hashlib.sha256(photo.read_bytes()).hexdigest()
    assert record["sha256"] == sha
    assert report.report_files[0].name == f"{sha}.json"


def test_recheck_never_writes_into_bundle_dirs(tmp_path):
    """A sealed bundle has no out/; rechecking it must not create one."""
    bundle = tmp_path / "bundle"
    (bundle / "src" / "fig").mkdir(parents=True)
    make_image(bundle / "src" / "fig" / "photo.png", 640, 480)
    before = sorted(p.as_posix() for p in bundle.rglob("*"))
    report = figsafe.recheck_all(bundle)
    assert report.blocking
    after = sorted(p.as_posix() for p in bundle.rglob("*"))
    assert before == after


def test_recheck_ignores_sidecars(project_dir):
    svg = project_dir.root.parent / "plot.svg"
    svg.write_text("<svg/>")
    figsafe.fig_add(project_dir.root, svg)
    report = figsafe.recheck_all(project_dir.root)
    assert all(not e.path.endswith(".json") for e in report.entries)
