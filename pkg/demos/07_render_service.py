"""Drive the HTTP render service the way the workbench does.

Starts a server on a scratch store, uploads nothing (the store is seeded
directly), then walks the API: list bundles, fetch a map thumbnail,
render under two lights, and download a sweep ZIP.

Run:  python3 demos/07_render_service.py
"""

import io
import json
import threading
import urllib.request
import zipfile
from pathlib import Path

from pbrflow.bundle_io import save_bundle
from pbrflow.service import create_server
from pbrflow.synthdata import generate_bundle, random_spec

out = Path(__file__).parent / "out" / "render_service"
store = out / "store"
bundle, _ = generate_bundle(random_spec(seed=21, resolution=96))
save_bundle(bundle, store / "demo-scene")

server = create_server(store, port=0)
threading.Thread(target=server.serve_forever, daemon=True).start()
base = f"http://{server.server_address[0]}:{server.server_address[1]}"
print(f"service up at {base}")


def get(path):
    with urllib.request.urlopen(base + path) as r:
        return r.read(), r.headers.get("Content-Type")


def post(path, body):
    req = urllib.request.Request(
        base + path, data=json.dumps(body).encode(), headers={"Content-Type": "application/json"}
    )
    with urllib.request.urlopen(req) as r:
        return r.read(), r.headers.get("Content-Type")


listing, _ = get("/bundles")
print("GET /bundles ->", listing.decode())
bundle_id = json.loads(listing)[0]["id"]

blob, ctype = get(f"/bundles/{bundle_id}/maps/albedo")
print(f"GET maps/albedo -> {len(blob)} bytes of {ctype}")

render_req = {
    "bundle_id": bundle_id,
    "light": {"azimuth_deg": 30, "elevation_deg": 45, "intensity": 20.0},
    "edits": [{"kind": "roughness_scale", "params": {"factor": 0.3}}],
    "tone": {"mu": 64, "alpha": 0.2},
}
img1, _ = post("/render", render_req)
img2, _ = post("/render", render_req)
(out / "render.png").write_bytes(img1)
print(f"POST /render -> {len(img1)} bytes; identical request gives identical bytes: {img1 == img2}")

sweep, _ = post("/sweep", {"bundle_id": bundle_id, "sweep": {"count": 8, "elevation_deg": 45}})
zf = zipfile.ZipFile(io.BytesIO(sweep))
print(f"POST /sweep -> ZIP with {sorted(zf.namelist())}")
zf.extractall(out / "sweep")

server.shutdown()
server.server_close()
print(f"outputs in {out}")
