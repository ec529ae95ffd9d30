#!/usr/bin/env python3
"""Serve the interactive session API against mock backends and exercise it.

    python3 scripts/serve_demo.py --port 8000

Starts the service, creates a demo session over a rendered scene, runs one
candidate step, commits the best candidate, prints the session document and
example curl commands, then keeps serving until interrupted.
"""

import argparse
import json
import sys
import threading
import time
import urllib.request

from insertkit.backends.mock import mock_suite
from insertkit.service import ServiceConfig, create_app


def demo_flow(base: str, png: bytes) -> None:
    boundary = "demo-boundary"
    body = (
        f"--{boundary}\r\n"
        'Content-Disposition: form-data; name="image"; filename="bg.png"\r\n'
        "Content-Type: image/png\r\n\r\n"
    ).encode() + png + f"\r\n--{boundary}--\r\n".encode()
    req = urllib.request.Request(
        f"{base}/api/sessions", data=body,
        headers={"Content-Type": f"multipart/form-data; boundary={boundary}"},
    )
    sid = json.load(urllib.request.urlopen(req))["id"]
    print(f"created session {sid}")

    def post(path, doc):
        req = urllib.request.Request(
            f"{base}{path}", data=json.dumps(doc).encode(),
            headers={"Content-Type": "application/json"},
        )
        return json.load(urllib.request.urlopen(req))

    candidates = post(f"/api/sessions/{sid}/steps",
                      {"instruction": "add a red circle at top left", "n": 4})
    print(f"candidates: {[c['id'] for c in candidates['candidates']]}")
    best = candidates["candidates"][0]
    doc = post(f"/api/sessions/{sid}/select", {"candidate_id": best["id"]})
    print(f"committed step 0, current image: {base}{doc['current_image_url']}")
    print("\ntry it yourself:")
    print(f"  curl -s {base}/api/sessions/{sid} | python3 -m json.tool")
    print(f"  curl -s -X POST {base}/api/sessions/{sid}/steps "
          f"-H 'content-type: application/json' "
          '-d \'{"instruction":"add a blue square at bottom right","n":4}\'')


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--scenario", default="shapes-small")
    args = parser.parse_args(argv)

    import uvicorn

    suite = mock_suite(args.scenario)
    app = create_app(suite.generator, suite.embedder, ServiceConfig())
    base = f"http://{args.host}:{args.port}"

    png = suite.scene_image("img0000").png_bytes()
    threading.Timer(1.5, demo_flow, args=(base, png)).start()
    print(f"serving on {base} (ctrl-c to stop)")
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
