from __future__ import annotations

import threading
from hashlib import sha256
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519
from PIL import Image

from clawxiv.project import ProjectMetadata, import_seed, parse_version_label

DATA_DIR = Path(__file__).parent / "data"


def make_image(path: Path, width: int, height: int, color=(120, 80, 40), fmt=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    image = Image.new("RGB", (width, height), color)
    image.save(path, format=fmt)
    return path


def make_keypair():
    private = ed25519.Ed25519PrivateKey.generate()
    private_pem = private.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )
    public_pem = private.public_key().public_bytes(
        serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
    )
    return private, private_pem, public_pem


def write_author_key(project_root: Path, name: str):
    """Drop a public key for the named author into keys/; return the pair."""
    from clawxiv.project import author_key_path

    private, private_pem, public_pem = make_keypair()
    key_path = author_key_path(project_root, name)
    key_path.parent.mkdir(parents=True, exist_ok=True)
    key_path.write_bytes(public_pem)
    return private, private_pem


def make_seed(base: Path, with_figure: bool = False) -> Path:
    seed = base / "seed"
    seed.mkdir(parents=True, exist_ok=True)
    (seed / "main.tex").write_text(
        "\\documentclass{article}\\begin{document}hello\\end{document}\n"
    )
    (seed / "refs.bib").write_text("@misc{x, title={X}}\n")
    if with_figure:
        make_image(seed / "plot.png", 150, 150)
    return seed


def snapshot_tree(root: Path) -> dict[str, bytes]:
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture
def project_dir(tmp_path):
    """Imported fixture project with one author key in place."""
    seed = make_seed(tmp_path)
    metadata = ProjectMetadata(
        title="fixture",
        version_label=parse_version_label("v1"),
        authors=["Ada Lovelace:human:corresponding"],
    )
    handle = import_seed(seed, tmp_path / "proj", metadata)
    private, private_pem = write_author_key(handle.root, "Ada Lovelace")
    key_file = tmp_path / "ada-private.pem"
    key_file.write_bytes(private_pem)
    handle.author_private_key = private
    handle.author_key_file = key_file
    return handle


class _GatewayHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        content_id = sha256(body).hexdigest()
        self.server.stored[content_id] = body
        self.send_response(200)
        self.send_header("Content-Type", "text/plain")
        self.end_headers()
        self.wfile.write(content_id.encode() + b"\n")

    def do_GET(self):
        content_id = self.path.strip("/")
        body = self.server.stored.get(content_id)
        if body is None:
            self.send_response(404)
            self.end_headers()
            return
        self.send_response(200)
        self.send_header("Content-Type", "application/x-tar")
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def gateway():
    """Localhost HTTP gateway double: POST stores a tar, GET serves it."""
    server = ThreadingHTTPServer(("127.0.0.1", 0), _GatewayHandler)
    server.stored = {}
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}", server.stored
    server.shutdown()
    thread.join(timeout=5)
