#!/usr/bin/env python3
"""Local stub for the two HTTP services the CLI can talk to.

Serves deterministic hash-based embeddings at /embed and template-based
query rewrites at /augment, so text queries can be exercised without any
real model:

    python scripts/serve_stub_endpoints.py --dim 64 --port 8720
    bend debias --text "a photo of a nurse" --reference ref/manifest.json \\
        --attribute gender --embed-endpoint http://127.0.0.1:8720/embed
"""

import argparse
import hashlib
import json
import sys
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from bend.augment import attribute_space, augment_query


def hash_embedding(text: str, dim: int) -> list[float]:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    vec = np.random.default_rng(seed).standard_normal(dim)
    return (vec / np.linalg.norm(vec)).tolist()


def make_handler(dim: int):
    class Handler(BaseHTTPRequestHandler):
        def _reply(self, payload: dict) -> None:
            blob = json.dumps(payload).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(blob)))
            self.end_headers()
            self.wfile.write(blob)

        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            if self.path.rstrip("/").endswith("augment"):
                space = attribute_space(body["attribute"], body["values"])
                rewritten = augment_query(body["text"], space)
                self._reply({"augmented": rewritten.per_value_texts})
            else:
                self._reply(
                    {"embeddings": [hash_embedding(t, dim) for t in body["texts"]]}
                )

        def log_message(self, fmt, *args):
            sys.stderr.write(f"stub: {fmt % args}\n")

    return Handler


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--port", type=int, default=8720)
    parser.add_argument("--host", default="127.0.0.1")
    args = parser.parse_args()
    server = HTTPServer((args.host, args.port), make_handler(args.dim))
    print(f"embed:   http://{args.host}:{args.port}/embed  (dim={args.dim})")
    print(f"augment: http://{args.host}:{args.port}/augment")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
