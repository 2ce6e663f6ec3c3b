"""HTTP render service backing the workbench.

Endpoints (JSON bodies, PNG/ZIP responses):
  GET  /bundles                                -> [{id, width, height}]
  POST /bundles            multipart upload    -> {id}
  GET  /bundles/{id}/maps/{name}               -> 16-bit PNG
  POST /render                                 -> 8-bit PNG
  POST /sweep                                  -> ZIP of frames
  GET  /ui/...                                 -> static workbench files

Render responses are pure functions of (bundle, light, edits, tone), so
they are cached by request hash. Uploads are content-addressed: an upload
never mutates a bundle another request may be rendering.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from email.parser import BytesParser
from email.policy import default as default_email_policy
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

import numpy as np

from .bundle_io import MANIFEST_NAME, MAP_NAMES, load_bundle
from .core import IntrinsicBundle, PbrError
from .edits import (
    EditOp,
    RelightSweepSpec,
    apply_edits,
    relight_sweep,
    save_sweep,
    to_display_png,
)
from .shading import (
    INFERENCE_LIGHT_INTENSITY,
    DirectionalLight,
    RenderConfig,
    display_image,
)

UPLOAD_FILES = (MANIFEST_NAME,) + tuple(f"{m}.png" for m in MAP_NAMES)


class BundleStore:
    """Content-addressed bundle directories under a root path."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._bundles: dict[str, IntrinsicBundle] = {}

    def ids(self) -> list:
        return sorted(p.name for p in self.root.iterdir() if (p / MANIFEST_NAME).exists())

    def listing(self) -> list:
        out = []
        for bid in self.ids():
            bundle = self.get(bid)
            out.append({"id": bid, "width": bundle.width, "height": bundle.height})
        return out

    def get(self, bundle_id: str) -> IntrinsicBundle:
        if bundle_id not in self._bundles:
            path = self.root / bundle_id
            if not (path / MANIFEST_NAME).exists():
                raise KeyError(bundle_id)
            self._bundles[bundle_id] = load_bundle(path)
        return self._bundles[bundle_id]

    def map_bytes(self, bundle_id: str, map_name: str) -> bytes:
        if map_name not in MAP_NAMES:
            raise KeyError(map_name)
        path = self.root / bundle_id
        if not (path / MANIFEST_NAME).exists():
            raise KeyError(bundle_id)
        manifest = json.loads((path / MANIFEST_NAME).read_text())
        return (path / manifest["maps"][map_name]).read_bytes()

    def add(self, files: dict) -> str:
        missing = [n for n in UPLOAD_FILES if n not in files]
        if missing:
            raise PbrError(f"upload missing files: {missing}")
        digest = hashlib.sha256()
        for name in UPLOAD_FILES:
            digest.update(name.encode())
            digest.update(files[name])
        bundle_id = digest.hexdigest()[:12]
        target = self.root / bundle_id
        if not (target / MANIFEST_NAME).exists():
            tmp = self.root / f".tmp-{bundle_id}"
            tmp.mkdir(parents=True, exist_ok=True)
            for name, blob in files.items():
                (tmp / name).write_bytes(blob)
            load_bundle(tmp)  # validate before publishing
            tmp.rename(target)
        return bundle_id


def light_from_json(d: dict) -> DirectionalLight:
    return DirectionalLight.from_angles(
        azimuth_deg=float(d.get("azimuth_deg", 0.0)),
        elevation_deg=float(d.get("elevation_deg", 45.0)),
        intensity=float(d.get("intensity", INFERENCE_LIGHT_INTENSITY)),
    )


def render_config_from_json(d: Optional[dict]) -> RenderConfig:
    d = d or {}
    base = RenderConfig()
    return RenderConfig(
        mu=float(d.get("mu", base.mu)),
        alpha=float(d.get("alpha", base.alpha)),
        eps=float(d.get("eps", base.eps)),
        f0_dielectric=float(d.get("f0_dielectric", base.f0_dielectric)),
    )


def render_display_png(bundle: IntrinsicBundle, light: DirectionalLight, edits, cfg: RenderConfig) -> bytes:
    """The one render path shared by the CLI and the service."""
    edited = apply_edits(bundle, list(edits))
    return to_display_png(display_image(edited, light, cfg))


def render_request(store: BundleStore, body: dict, cache: Optional[dict] = None) -> bytes:
    key = None
    if cache is not None:
        key = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
        if key in cache:
            return cache[key]
    bundle = store.get(str(body["bundle_id"]))
    light = light_from_json(body.get("light", {}))
    edits = [EditOp.from_json_dict(e) for e in body.get("edits", [])]
    cfg = render_config_from_json(body.get("tone"))
    blob = render_display_png(bundle, light, edits, cfg)
    if cache is not None:
        cache[key] = blob
    return blob


def sweep_request(store: BundleStore, body: dict) -> bytes:
    bundle = store.get(str(body["bundle_id"]))
    s = body.get("sweep", {})
    spec = RelightSweepSpec(
        elevation_deg=float(s.get("elevation_deg", 45.0)),
        azimuth_start_deg=float(s.get("azimuth_start_deg", 0.0)),
        azimuth_stop_deg=float(s.get("azimuth_stop_deg", 315.0)),
        count=int(s.get("count", 8)),
        intensity=float(s.get("intensity", INFERENCE_LIGHT_INTENSITY)),
    )
    frames = relight_sweep(bundle, spec)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for i, frame in enumerate(frames):
            info = zipfile.ZipInfo(f"frame_{i:03d}.png", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, to_display_png(frame))
        info = zipfile.ZipInfo("index.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(
            info,
            json.dumps(
                {
                    "elevation_deg": spec.elevation_deg,
                    "azimuths_deg": spec.azimuths(),
                    "intensity": spec.intensity,
                    "frames": [f"frame_{i:03d}.png" for i in range(spec.count)],
                },
                indent=2,
            ),
        )
    return buf.getvalue()


def parse_multipart(content_type: str, payload: bytes) -> dict:
    """name -> bytes for a multipart/form-data body (file parts keep their filename)."""
    parser = BytesParser(policy=default_email_policy)
    msg = parser.parsebytes(
        b"Content-Type: " + content_type.encode() + b"\r\nMIME-Version: 1.0\r\n\r\n" + payload
    )
    if not msg.is_multipart():
        raise PbrError("expected multipart/form-data upload")
    files: dict[str, bytes] = {}
    for part in msg.iter_parts():
        name = part.get_filename() or part.get_param("name", header="content-disposition")
        if name:
            files[name] = part.get_payload(decode=True) or b""
    return files


def make_handler(store: BundleStore, ui_root: Optional[Path], cache: dict):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # keep test output clean
            pass

        def _send(self, status: int, content_type: str, body: bytes):
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _json(self, status: int, obj):
            self._send(status, "application/json", json.dumps(obj).encode())

        def _error(self, status: int, message: str):
            self._json(status, {"error": message})

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            try:
                parts = [p for p in self.path.split("?")[0].split("/") if p]
                if parts == ["bundles"]:
                    self._json(200, store.listing())
                elif len(parts) == 4 and parts[0] == "bundles" and parts[2] == "maps":
                    try:
                        blob = store.map_bytes(parts[1], parts[3])
                    except KeyError as exc:
                        self._error(404, f"unknown bundle or map: {exc}")
                        return
                    self._send(200, "image/png", blob)
                elif parts and parts[0] == "ui":
                    self._serve_ui(parts[1:])
                elif not parts:
                    self._send(301, "text/plain", b"see /ui/")
                else:
                    self._error(404, f"no route for {self.path}")
            except Exception as exc:  # noqa: BLE001 - service boundary
                self._error(500, str(exc))

        def _serve_ui(self, rel_parts):
            if ui_root is None:
                self._error(404, "workbench UI not bundled with this service")
                return
            rel = "/".join(rel_parts) or "index.html"
            target = (ui_root / rel).resolve()
            if not str(target).startswith(str(ui_root.resolve())) or not target.is_file():
                self._error(404, f"no UI file {rel}")
                return
            ctype = {
                ".html": "text/html",
                ".js": "text/javascript",
                ".css": "text/css",
                ".png": "image/png",
                ".map": "application/json",
            }.get(target.suffix, "application/octet-stream")
            self._send(200, ctype, target.read_bytes())

        def _read_body(self) -> bytes:
            length = int(self.headers.get("Content-Length", "0"))
            return self.rfile.read(length)

        def do_POST(self):
            try:
                parts = [p for p in self.path.split("?")[0].split("/") if p]
                if parts == ["bundles"]:
                    files = parse_multipart(self.headers.get("Content-Type", ""), self._read_body())
                    bundle_id = store.add(files)
                    self._json(200, {"id": bundle_id})
                elif parts == ["render"]:
                    body = json.loads(self._read_body())
                    try:
                        blob = render_request(store, body, cache)
                    except KeyError as exc:
                        self._error(404, f"unknown bundle {exc}")
                        return
                    self._send(200, "image/png", blob)
                elif parts == ["sweep"]:
                    body = json.loads(self._read_body())
                    try:
                        blob = sweep_request(store, body)
                    except KeyError as exc:
                        self._error(404, f"unknown bundle {exc}")
                        return
                    self._send(200, "application/zip", blob)
                else:
                    self._error(404, f"no route for {self.path}")
            except (PbrError, json.JSONDecodeError, KeyError, ValueError) as exc:
                self._error(400, str(exc))
            except Exception as exc:  # noqa: BLE001 - service boundary
                self._error(500, str(exc))

    return Handler


def create_server(store_dir, host: str = "127.0.0.1", port: int = 8517, ui_root=None) -> ThreadingHTTPServer:
    """Build the threading HTTP server; call serve_forever() to run it."""
    store = BundleStore(store_dir)
    cache: dict[str, bytes] = {}
    if ui_root is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_root = candidate if candidate.is_dir() else None
    handler = make_handler(store, Path(ui_root) if ui_root else None, cache)
    return ThreadingHTTPServer((host, port), handler)


def serve(store_dir, host: str = "127.0.0.1", port: int = 8517, ui_root=None) -> None:
    server = create_server(store_dir, host, port, ui_root)
    bound_host, bound_port = server.server_address[:2]
    print(f"render service listening on http://{bound_host}:{bound_port} (store: {store_dir})", flush=True)
    try:
        server.serve_forever()
    finally:
        server.server_close()
