import io
import json
import threading
import urllib.request
import zipfile

import numpy as np
import pytest

from pbrflow import png
from pbrflow.bundle_io import save_bundle
from pbrflow.core import ImageBuffer
from pbrflow.edits import EditOp
from pbrflow.service import (
    BundleStore,
    create_server,
    parse_multipart,
    render_display_png,
    render_request,
)
from pbrflow.shading import DirectionalLight, RenderConfig, tone_map

from helpers import make_bundle


@pytest.fixture
def store(tmp_path, rng):
    b = make_bundle(rng, h=8, w=8, facing=True)
    save_bundle(b, tmp_path / "store" / "seedbundle")
    return BundleStore(tmp_path / "store")


@pytest.fixture
def live_server(store):
    server = create_server(store.root, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address
    yield f"http://{host}:{port}"
    server.shutdown()
    server.server_close()


def http(url, method="GET", body=None, content_type="application/json"):
    data = None
    headers = {}
    if body is not None:
        data = body if isinstance(body, bytes) else json.dumps(body).encode()
        headers["Content-Type"] = content_type
    req = urllib.request.Request(url, data=data, headers=headers, method=method)
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, resp.read(), resp.headers.get("Content-Type")
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read(), exc.headers.get("Content-Type")


class TestStore:
    def test_listing(self, store):
        listing = store.listing()
        assert len(listing) == 1
        assert listing[0]["width"] == 8 and listing[0]["height"] == 8

    def test_empty_store_lists_nothing(self, tmp_path):
        assert BundleStore(tmp_path / "empty").listing() == []

    def test_add_is_content_addressed(self, store, tmp_path, rng):
        src = store.root / "seedbundle"
        files = {p.name: p.read_bytes() for p in src.iterdir()}
        a = store.add(files)
        b = store.add(files)
        assert a == b

    def test_add_missing_file_rejected(self, store):
        from pbrflow.core import PbrError

        with pytest.raises(PbrError, match="missing files"):
            store.add({"manifest.json": b"{}"})


class TestRenderRequest:
    def test_alpha_one_no_edits_equals_tonemapped_albedo(self, store):
        bundle_id = store.ids()[0]
        body = {
            "bundle_id": bundle_id,
            "light": {"azimuth_deg": 30, "elevation_deg": 45, "intensity": 0.0},
            "edits": [],
            "tone": {"alpha": 1.0},
        }
        blob = render_request(store, body)
        img = png.decode(blob).astype(np.float64) / 255.0
        expected = tone_map(store.get(bundle_id).albedo, RenderConfig().mu).array
        assert np.max(np.abs(img - expected)) <= 0.5 / 255 + 1e-12

    def test_identical_bodies_identical_bytes(self, store):
        body = {
            "bundle_id": store.ids()[0],
            "light": {"azimuth_deg": 120, "elevation_deg": 30, "intensity": 7.0},
            "edits": [{"kind": "roughness_scale", "params": {"factor": 0.4}}],
            "tone": {},
        }
        cache = {}
        assert render_request(store, body, cache) == render_request(store, dict(body), cache)
        assert render_request(store, body) == render_request(store, body, cache)

    def test_cli_and_service_paths_identical(self, store):
        bundle = store.get(store.ids()[0])
        light = DirectionalLight.from_angles(75.0, 40.0, 9.0)
        edits = [EditOp("metallic_set", {"value": 0.8})]
        direct = render_display_png(bundle, light, edits, RenderConfig())
        via_request = render_request(
            store,
            {
                "bundle_id": store.ids()[0],
                "light": {"azimuth_deg": 75.0, "elevation_deg": 40.0, "intensity": 9.0},
                "edits": [e.to_json_dict() for e in edits],
            },
        )
        assert direct == via_request


class TestHttpApi:
    def test_get_bundles(self, live_server, store):
        status, body, ctype = http(f"{live_server}/bundles")
        assert status == 200 and ctype == "application/json"
        assert json.loads(body)[0]["id"] == store.ids()[0]

    def test_get_map_png(self, live_server, store):
        bid = store.ids()[0]
        status, body, ctype = http(f"{live_server}/bundles/{bid}/maps/albedo")
        assert status == 200 and ctype == "image/png"
        assert png.decode(body).shape == (8, 8, 3)

    def test_unknown_bundle_404(self, live_server):
        status, body, _ = http(f"{live_server}/bundles/nope/maps/albedo")
        assert status == 404
        assert "error" in json.loads(body)

    def test_render_endpoint(self, live_server, store):
        req = {
            "bundle_id": store.ids()[0],
            "light": {"azimuth_deg": 10, "elevation_deg": 50, "intensity": 12.0},
            "edits": [],
            "tone": {"mu": 64, "alpha": 0.2},
        }
        s1, b1, ctype = http(f"{live_server}/render", "POST", req)
        s2, b2, _ = http(f"{live_server}/render", "POST", req)
        assert s1 == s2 == 200 and ctype == "image/png"
        assert b1 == b2

    def test_render_unknown_bundle_404(self, live_server):
        status, _, _ = http(f"{live_server}/render", "POST", {"bundle_id": "missing"})
        assert status == 404

    def test_render_malformed_body_400(self, live_server):
        status, _, _ = http(f"{live_server}/render", "POST", b"{not json", content_type="application/json")
        assert status == 400

    def test_sweep_returns_zip_of_frames(self, live_server, store):
        req = {"bundle_id": store.ids()[0], "sweep": {"count": 4, "elevation_deg": 45}}
        status, body, ctype = http(f"{live_server}/sweep", "POST", req)
        assert status == 200 and ctype == "application/zip"
        zf = zipfile.ZipFile(io.BytesIO(body))
        assert sorted(zf.namelist()) == ["frame_000.png", "frame_001.png", "frame_002.png", "frame_003.png", "index.json"]

    def test_multipart_upload_roundtrip(self, live_server, store, tmp_path, rng):
        b = make_bundle(rng, h=4, w=4, facing=True)
        save_bundle(b, tmp_path / "up")
        boundary = "testboundary123"
        parts = []
        for p in sorted((tmp_path / "up").iterdir()):
            parts.append(
                f'--{boundary}\r\nContent-Disposition: form-data; name="{p.name}"; filename="{p.name}"\r\n'
                f"Content-Type: application/octet-stream\r\n\r\n".encode() + p.read_bytes() + b"\r\n"
            )
        payload = b"".join(parts) + f"--{boundary}--\r\n".encode()
        status, body, _ = http(
            f"{live_server}/bundles",
            "POST",
            payload,
            content_type=f"multipart/form-data; boundary={boundary}",
        )
        assert status == 200
        new_id = json.loads(body)["id"]
        status, listing, _ = http(f"{live_server}/bundles")
        assert any(item["id"] == new_id for item in json.loads(listing))


class TestMultipartParser:
    def test_parses_files(self):
        boundary = "xyz"
        payload = (
            f'--{boundary}\r\nContent-Disposition: form-data; name="a"; filename="a.txt"\r\n\r\n'.encode()
            + b"hello\r\n"
            + f"--{boundary}--\r\n".encode()
        )
        files = parse_multipart(f"multipart/form-data; boundary={boundary}", payload)
        assert files == {"a.txt": b"hello"}

    def test_rejects_non_multipart(self):
        from pbrflow.core import PbrError

        with pytest.raises(PbrError):
            parse_multipart("application/json", b"{}")
