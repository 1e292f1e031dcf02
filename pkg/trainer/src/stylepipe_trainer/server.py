"""Serving stub: the pipeline's completion HTTP contract over a trained adapter.

POST {"model": tag, "prompt": text, "max_tokens": n, "temperature": t}
 -> {"text": generated}
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import torch

from .lora import load_adapter
from .model import build_base_model, decode, encode

logger = logging.getLogger(__name__)


def load_served_model(adapter_dir: str | Path):
    adapter_dir = Path(adapter_dir)
    config = json.loads((adapter_dir / "adapter-config.json").read_text(encoding="utf-8"))
    model = build_base_model(config.get("base_model", "tiny-causal-lm"), seed=int(config.get("seed", 0)))
    load_adapter(model, adapter_dir)
    model.eval()
    return model, config


class _Handler(BaseHTTPRequestHandler):
    model = None
    lock = threading.Lock()
    default_max_tokens = 64

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length))
            prompt = str(body["prompt"])
            max_tokens = min(int(body.get("max_tokens", self.default_max_tokens)), 256)
            temperature = float(body.get("temperature", 0.0))
        except (ValueError, KeyError) as exc:
            self._respond(400, {"error": f"bad request: {exc}"})
            return
        with self.lock:
            with torch.no_grad():
                out_ids = self.model.generate(encode(prompt), max_tokens, temperature)
        self._respond(200, {"text": decode(out_ids)})

    def _respond(self, status: int, payload: dict) -> None:
        blob = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def log_message(self, *args):  # noqa: D102 - quiet server
        pass


def serve_stub(adapter_dir: str | Path, port: int = 0, host: str = "127.0.0.1") -> ThreadingHTTPServer:
    """Start the stub in a daemon thread; returns the (bound) server object."""
    model, config = load_served_model(adapter_dir)

    class Handler(_Handler):
        pass

    Handler.model = model
    server = ThreadingHTTPServer((host, port), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    logger.info("serving adapter %s on %s:%d", adapter_dir, host, server.server_port)
    return server
