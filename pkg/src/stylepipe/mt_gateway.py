"""Uniform client over translation backends with caching, batching, retry.

Roundtrip translation (text -> pivot language -> back) is the neutralization
step of the pipeline: the twice-translated output drops most of the original
style while keeping content. Real NMT systems plug in over HTTP; two mock
backends ship in-tree so every downstream stage runs offline:

- mock_identity: echoes its input.
- mock_scramble: per-token substitution table plus a seeded, reversible
  token permutation. Tokens missing from the table have their core
  characters reversed (an involution), so a scramble backend paired with an
  inverse-table scramble backend recovers the original text exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import requests

logger = logging.getLogger(__name__)

MT_BACKEND_KINDS = ("http", "mock_identity", "mock_scramble")

# Default synonym table for mock_scramble. Values carry a digit marker so
# they can never collide with the character-reversal of a plain word.
DEFAULT_SCRAMBLE_TABLE = {
    "car": "wagen7",
    "house": "haus7",
    "water": "wasser7",
    "book": "buch7",
}


class TranslationError(RuntimeError):
    """A backend request failed after retries, or returned malformed data."""


class RoundtripError(RuntimeError):
    """One stage of a roundtrip failed; carries the stage and original text."""

    def __init__(self, stage: str, original: str, detail: str):
        super().__init__(f"roundtrip {stage} failed for {original!r}: {detail}")
        self.stage = stage
        self.original = original
        self.detail = detail


@dataclass(frozen=True)
class MtBackendSpec:
    """Configuration of one translation backend."""

    backend_id: str
    kind: str
    src_lang: str
    tgt_lang: str
    model_tag: str = ""
    endpoint: str = ""
    api_key: str = ""
    seed: int = 0
    mapping: Mapping[str, str] | None = None
    inverse: bool = False

    def __post_init__(self) -> None:
        if self.kind not in MT_BACKEND_KINDS:
            raise ValueError(f"unknown MT backend kind {self.kind!r}")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http backend requires an endpoint")
        if self.src_lang == self.tgt_lang:
            raise ValueError("src_lang and tgt_lang must differ")


@dataclass(frozen=True)
class TranslationOutcome:
    """Per-item result of a batched translate call."""

    text: str | None
    error: str | None = None
    cache_hit: bool = False

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class RoundtripResult:
    original: str
    pivot_text: str
    neutral: str
    pivot_lang: str
    forward_backend: str
    backward_backend: str
    cache_hit: tuple[bool, bool] = (False, False)


def invert_mapping(mapping: Mapping[str, str]) -> dict[str, str]:
    inverted = {v: k for k, v in mapping.items()}
    if len(inverted) != len(mapping):
        raise ValueError("mapping is not invertible (duplicate values)")
    return inverted


_AFFIX_RE = re.compile(r"^(\W*)(.*?)(\W*)$", re.UNICODE | re.DOTALL)


def _map_token(token: str, mapping: Mapping[str, str]) -> str:
    # Leading/trailing punctuation is preserved; only the core is mapped.
    lead, core, trail = _AFFIX_RE.match(token).groups()
    replaced = mapping.get(core, core[::-1])
    return f"{lead}{replaced}{trail}"


def _scramble_perm(seed: int, n: int) -> list[int]:
    rng = random.Random(f"scramble:{seed}:{n}")
    perm = list(range(n))
    rng.shuffle(perm)
    return perm


class _IdentityBackend:
    def __call__(self, texts: Sequence[str]) -> list[str]:
        return list(texts)


class _ScrambleBackend:
    def __init__(self, spec: MtBackendSpec):
        self.seed = spec.seed
        self.mapping = dict(spec.mapping) if spec.mapping is not None else dict(
            DEFAULT_SCRAMBLE_TABLE if not spec.inverse else invert_mapping(DEFAULT_SCRAMBLE_TABLE)
        )
        self.inverse = spec.inverse

    def _one(self, text: str) -> str:
        tokens = text.split()
        perm = _scramble_perm(self.seed, len(tokens))
        if self.inverse:
            unscrambled = [""] * len(tokens)
            for i, tok in enumerate(tokens):
                unscrambled[perm[i]] = tok
            tokens = [_map_token(t, self.mapping) for t in unscrambled]
        else:
            mapped = [_map_token(t, self.mapping) for t in tokens]
            tokens = [mapped[perm[i]] for i in range(len(mapped))]
        return " ".join(tokens)

    def __call__(self, texts: Sequence[str]) -> list[str]:
        return [self._one(t) for t in texts]


class _HttpBackend:
    def __init__(self, spec: MtBackendSpec, session: requests.Session | None = None, timeout: float = 30.0):
        self.spec = spec
        self.session = session or requests.Session()
        self.timeout = timeout

    def __call__(self, texts: Sequence[str]) -> list[str]:
        headers = {}
        if self.spec.api_key:
            headers["Authorization"] = f"Bearer {self.spec.api_key}"
        resp = self.session.post(
            self.spec.endpoint,
            json={"src": self.spec.src_lang, "tgt": self.spec.tgt_lang, "texts": list(texts)},
            headers=headers,
            timeout=self.timeout,
        )
        if resp.status_code != 200:
            raise TranslationError(f"backend {self.spec.backend_id}: HTTP {resp.status_code}")
        try:
            translations = resp.json()["translations"]
        except (ValueError, KeyError) as exc:
            raise TranslationError(f"backend {self.spec.backend_id}: malformed response") from exc
        if not isinstance(translations, list) or len(translations) != len(texts):
            raise TranslationError(
                f"backend {self.spec.backend_id}: expected {len(texts)} translations"
            )
        return [str(t) for t in translations]


def build_backend(spec: MtBackendSpec, session: requests.Session | None = None):
    if spec.kind == "mock_identity":
        return _IdentityBackend()
    if spec.kind == "mock_scramble":
        return _ScrambleBackend(spec)
    return _HttpBackend(spec, session=session)


class TranslationCache:
    """Append-only key->value store; survives process restarts when backed by a file.

    Keys are SHA-256 of (backend_id, model_tag, text), so a cache can be
    shared across backends safely. Concurrent readers are fine; writes are
    serialized. Duplicate keys are tolerated (last write wins).
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._data: dict[str, str] = {}
        self.hits = 0
        self.misses = 0
        if self.path is not None and self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    self._data[row["k"]] = row["v"]

    @staticmethod
    def key(backend_id: str, model_tag: str, text: str) -> str:
        return hashlib.sha256(f"{backend_id}|{model_tag}|{text}".encode("utf-8")).hexdigest()

    def get(self, key: str) -> str | None:
        value = self._data.get(key)
        if value is None:
            self.misses += 1
        else:
            self.hits += 1
        return value

    def put(self, key: str, value: str) -> None:
        with self._lock:
            self._data[key] = value
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8", newline="\n") as fh:
                    fh.write(json.dumps({"k": key, "v": value}, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._data)


class MtGateway:
    """Batched, cached, retrying front over registered translation backends."""

    def __init__(
        self,
        cache: TranslationCache | None = None,
        batch_size: int = 32,
        max_in_flight: int = 4,
        retries: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
        session: requests.Session | None = None,
    ):
        if batch_size < 1 or max_in_flight < 1 or retries < 1:
            raise ValueError("batch_size, max_in_flight and retries must be >= 1")
        self.cache = cache if cache is not None else TranslationCache()
        self.batch_size = batch_size
        self.max_in_flight = max_in_flight
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep
        self._session = session
        self._specs: dict[str, MtBackendSpec] = {}
        self._backends: dict[str, Callable[[Sequence[str]], list[str]]] = {}
        self.requests_by_backend: Counter[str] = Counter()
        self.items_by_backend: Counter[str] = Counter()

    def register(self, spec: MtBackendSpec) -> None:
        if spec.backend_id in self._specs:
            raise ValueError(f"backend {spec.backend_id!r} already registered")
        self._specs[spec.backend_id] = spec
        self._backends[spec.backend_id] = build_backend(spec, session=self._session)

    def spec(self, backend_id: str) -> MtBackendSpec:
        return self._specs[backend_id]

    @property
    def total_backend_calls(self) -> int:
        return sum(self.requests_by_backend.values())

    def _request(self, backend_id: str, chunk: list[tuple[int, str]]) -> list[tuple[int, TranslationOutcome]]:
        backend = self._backends[backend_id]
        texts = [text for _, text in chunk]
        spec = self._specs[backend_id]
        last_error = "unknown error"
        for attempt in range(self.retries):
            self.requests_by_backend[backend_id] += 1
            self.items_by_backend[backend_id] += len(texts)
            try:
                translations = backend(texts)
            except Exception as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                logger.warning(
                    "backend %s attempt %d/%d failed: %s",
                    backend_id, attempt + 1, self.retries, last_error,
                )
                if attempt + 1 < self.retries:
                    delay = self.backoff * (2 ** attempt)
                    self._sleep(delay + random.uniform(0, 0.1 * delay))
                continue
            out = []
            for (idx, text), translated in zip(chunk, translations):
                self.cache.put(TranslationCache.key(backend_id, spec.model_tag, text), translated)
                out.append((idx, TranslationOutcome(text=translated)))
            return out
        return [(idx, TranslationOutcome(text=None, error=last_error)) for idx, _ in chunk]

    def translate(self, texts: Sequence[str], backend_id: str) -> list[TranslationOutcome]:
        """Translate a batch, preserving order; failures are per-item markers.

        For a fixed (backend_id, model_tag) the result is a pure function of
        each text, which is what makes the cache sound.
        """
        if not texts:
            raise ValueError("batch must be nonempty")
        if any(not t for t in texts):
            raise ValueError("batch texts must be nonempty")
        if backend_id not in self._backends:
            raise KeyError(f"backend {backend_id!r} not registered")
        spec = self._specs[backend_id]

        results: list[TranslationOutcome | None] = [None] * len(texts)
        misses: list[tuple[int, str]] = []
        for i, text in enumerate(texts):
            cached = self.cache.get(TranslationCache.key(backend_id, spec.model_tag, text))
            if cached is not None:
                results[i] = TranslationOutcome(text=cached, cache_hit=True)
            else:
                misses.append((i, text))

        chunks = [misses[i : i + self.batch_size] for i in range(0, len(misses), self.batch_size)]
        if len(chunks) <= 1 or self.max_in_flight == 1:
            chunk_results = [self._request(backend_id, chunk) for chunk in chunks]
        else:
            with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
                chunk_results = list(pool.map(lambda c: self._request(backend_id, c), chunks))
        for chunk in chunk_results:
            for idx, outcome in chunk:
                results[idx] = outcome
        return results  # type: ignore[return-value]


@dataclass(frozen=True)
class PivotRoute:
    """Forward (en->pivot) and backward (pivot->en) backend ids for a pivot."""

    pivot: str
    forward: str
    backward: str


class RoundtripPipeline:
    """Roundtrip translator over a gateway with per-pivot backend routes."""

    def __init__(self, gateway: MtGateway, routes: Sequence[PivotRoute], default_pivot: str = "zh"):
        self.gateway = gateway
        self.routes = {r.pivot: r for r in routes}
        if not self.routes:
            raise ValueError("at least one pivot route is required")
        self.default_pivot = default_pivot if default_pivot in self.routes else next(iter(self.routes))

    @property
    def pivots(self) -> list[str]:
        return sorted(self.routes)

    def _route(self, pivot: str | None) -> PivotRoute:
        code = pivot or self.default_pivot
        if code not in self.routes:
            raise ValueError(f"pivot {code!r} not configured (have {self.pivots})")
        return self.routes[code]

    def roundtrip(self, text: str, pivot: str | None = None) -> RoundtripResult:
        """Translate to the pivot language and back; raises RoundtripError."""
        result = self.roundtrip_batch([text], pivot)[0]
        if isinstance(result, RoundtripError):
            raise result
        return result

    def roundtrip_batch(
        self, texts: Sequence[str], pivot: str | None = None
    ) -> list[RoundtripResult | RoundtripError]:
        """Roundtrip a batch; per-item failures become RoundtripError entries."""
        route = self._route(pivot)
        forward = self.gateway.translate(texts, route.forward)
        results: list[RoundtripResult | RoundtripError] = [None] * len(texts)  # type: ignore[list-item]
        back_inputs: list[tuple[int, str, TranslationOutcome]] = []
        for i, outcome in enumerate(forward):
            if not outcome.ok:
                results[i] = RoundtripError("forward", texts[i], outcome.error or "")
            elif not outcome.text:
                results[i] = RoundtripError("forward", texts[i], "empty translation")
            else:
                back_inputs.append((i, outcome.text, outcome))
        if back_inputs:
            backward = self.gateway.translate([t for _, t, _ in back_inputs], route.backward)
            for (i, pivot_text, fwd), bwd in zip(back_inputs, backward):
                if not bwd.ok:
                    results[i] = RoundtripError("backward", texts[i], bwd.error or "")
                elif not bwd.text:
                    results[i] = RoundtripError("backward", texts[i], "empty translation")
                else:
                    results[i] = RoundtripResult(
                        original=texts[i],
                        pivot_text=pivot_text,
                        neutral=bwd.text,
                        pivot_lang=route.pivot,
                        forward_backend=route.forward,
                        backward_backend=route.backward,
                        cache_hit=(fwd.cache_hit, bwd.cache_hit),
                    )
        return results
