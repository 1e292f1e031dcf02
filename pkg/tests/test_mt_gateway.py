import json
import random
import string
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from stylepipe.mt_gateway import (
    DEFAULT_SCRAMBLE_TABLE,
    MtBackendSpec,
    MtGateway,
    PivotRoute,
    RoundtripError,
    RoundtripPipeline,
    TranslationCache,
    invert_mapping,
)


def make_gateway(**kwargs):
    kwargs.setdefault("sleep", lambda s: None)
    return MtGateway(**kwargs)


def identity_spec(backend_id, src="en", tgt="zh"):
    return MtBackendSpec(backend_id, "mock_identity", src, tgt, model_tag="idv1")


def scramble_pair(seed=7, mapping=None, src="en", tgt="zh"):
    fwd = MtBackendSpec("scr-f", "mock_scramble", src, tgt, model_tag="s1", seed=seed, mapping=mapping)
    bwd_map = invert_mapping(mapping) if mapping is not None else None
    bwd = MtBackendSpec("scr-b", "mock_scramble", tgt, src, model_tag="s1", seed=seed, mapping=bwd_map, inverse=True)
    return fwd, bwd


class TestSpecs:
    def test_http_requires_endpoint(self):
        with pytest.raises(ValueError):
            MtBackendSpec("b", "http", "en", "zh")

    def test_same_langs_rejected(self):
        with pytest.raises(ValueError):
            MtBackendSpec("b", "mock_identity", "en", "en")

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            MtBackendSpec("b", "teleport", "en", "zh")


class TestTranslate:
    def test_identity_backend_echoes(self):
        gw = make_gateway()
        gw.register(identity_spec("id"))
        out = gw.translate(["hello"], "id")
        assert [o.text for o in out] == ["hello"]

    def test_scramble_deterministic_across_calls(self):
        gw = make_gateway()
        fwd, _ = scramble_pair(seed=7)
        gw.register(fwd)
        first = [o.text for o in gw.translate(["a b c"], "scr-f")]
        gw2 = make_gateway()
        gw2.register(fwd)
        second = [o.text for o in gw2.translate(["a b c"], "scr-f")]
        assert first == second

    def test_empty_batch_rejected(self):
        gw = make_gateway()
        gw.register(identity_spec("id"))
        with pytest.raises(ValueError):
            gw.translate([], "id")
        with pytest.raises(ValueError):
            gw.translate(["ok", ""], "id")

    def test_fully_cached_batch_issues_no_calls(self):
        gw = make_gateway()
        spec = identity_spec("id")
        gw.register(spec)
        texts = [f"sentence number {i}" for i in range(100)]
        for text in texts:
            gw.cache.put(TranslationCache.key("id", spec.model_tag, text), text.upper())
        before = gw.total_backend_calls
        out = gw.translate(texts, "id")
        assert gw.total_backend_calls == before == 0
        assert all(o.cache_hit for o in out)
        assert [o.text for o in out] == [t.upper() for t in texts]

    def test_order_preserved_over_batches(self):
        gw = make_gateway(batch_size=7, max_in_flight=3)
        gw.register(identity_spec("id"))
        texts = [f"text {i}" for i in range(40)]
        out = gw.translate(texts, "id")
        assert [o.text for o in out] == texts

    def test_cache_persists_on_disk(self, tmp_path):
        cache_path = tmp_path / "mt.jsonl"
        gw = make_gateway(cache=TranslationCache(cache_path))
        gw.register(identity_spec("id"))
        gw.translate(["persist me please"], "id")
        gw2 = make_gateway(cache=TranslationCache(cache_path))
        gw2.register(identity_spec("id"))
        out = gw2.translate(["persist me please"], "id")
        assert out[0].cache_hit
        assert gw2.total_backend_calls == 0


class TestRoundtrip:
    def test_identity_roundtrip_returns_original(self):
        gw = make_gateway()
        gw.register(identity_spec("f", "en", "zh"))
        gw.register(identity_spec("b", "zh", "en"))
        pipe = RoundtripPipeline(gw, [PivotRoute("zh", "f", "b")])
        result = pipe.roundtrip("hello world out there")
        assert result.neutral == "hello world out there"
        assert result.pivot_lang == "zh"

    def test_configured_pivots_accepted(self):
        gw = make_gateway()
        for code in ("zh", "de"):
            gw.register(identity_spec(f"f-{code}", "en", code))
            gw.register(identity_spec(f"b-{code}", code, "en"))
        pipe = RoundtripPipeline(
            gw,
            [PivotRoute("zh", "f-zh", "b-zh"), PivotRoute("de", "f-de", "b-de")],
        )
        assert pipe.pivots == ["de", "zh"]
        for code in ("zh", "de"):
            assert pipe.roundtrip("some text here", code).pivot_lang == code
        with pytest.raises(ValueError):
            pipe.roundtrip("some text here", "fr")

    def test_scramble_with_inverse_table_recovers_original(self):
        mapping = dict(DEFAULT_SCRAMBLE_TABLE)
        fwd, bwd = scramble_pair(seed=11, mapping=mapping)
        gw = make_gateway()
        gw.register(fwd)
        gw.register(bwd)
        pipe = RoundtripPipeline(gw, [PivotRoute("zh", "scr-f", "scr-b")])
        rng = random.Random(5)
        vocab = ["car", "house", "water", "book", "tree", "stone", "light", "river"]
        for _ in range(200):
            sentence = " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 12))) + "."
            result = pipe.roundtrip(sentence)
            assert result.neutral == sentence

    def test_at_most_two_calls_per_uncached_input_zero_when_cached(self):
        gw = make_gateway()
        gw.register(identity_spec("f", "en", "zh"))
        gw.register(identity_spec("b", "zh", "en"))
        pipe = RoundtripPipeline(gw, [PivotRoute("zh", "f", "b")])
        pipe.roundtrip("count my calls")
        assert gw.total_backend_calls == 2
        result = pipe.roundtrip("count my calls")
        assert gw.total_backend_calls == 2
        assert result.cache_hit == (True, True)


class _FlakyHandler(BaseHTTPRequestHandler):
    failures_left = 2
    always_fail = False

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if type(self).always_fail or type(self).failures_left > 0:
            type(self).failures_left -= 1
            self.send_response(500)
            self.end_headers()
            return
        payload = json.dumps({"translations": [t.upper() for t in body["texts"]]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def flaky_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _FlakyHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/translate"
    server.shutdown()


class TestHttpBackend:
    def test_retry_then_success(self, flaky_server):
        _FlakyHandler.failures_left = 2
        _FlakyHandler.always_fail = False
        gw = make_gateway(retries=3)
        gw.register(
            MtBackendSpec("http", "http", "en", "zh", model_tag="m", endpoint=flaky_server)
        )
        out = gw.translate(["retry works"], "http")
        assert out[0].text == "RETRY WORKS"
        assert gw.requests_by_backend["http"] == 3

    def test_per_item_error_markers_after_exhausted_retries(self, flaky_server):
        _FlakyHandler.always_fail = True
        gw = make_gateway(retries=3)
        gw.register(
            MtBackendSpec("http", "http", "en", "zh", model_tag="m", endpoint=flaky_server)
        )
        out = gw.translate(["doomed one", "doomed two"], "http")
        assert all(not o.ok for o in out)
        assert all("500" in o.error for o in out)
        _FlakyHandler.always_fail = False

    def test_roundtrip_error_carries_stage_and_text(self, flaky_server):
        _FlakyHandler.always_fail = True
        gw = make_gateway(retries=2)
        gw.register(MtBackendSpec("f", "http", "en", "zh", model_tag="m", endpoint=flaky_server))
        gw.register(identity_spec("b", "zh", "en"))
        pipe = RoundtripPipeline(gw, [PivotRoute("zh", "f", "b")])
        with pytest.raises(RoundtripError) as err:
            pipe.roundtrip("this will fail")
        assert err.value.stage == "forward"
        assert err.value.original == "this will fail"
        _FlakyHandler.always_fail = False


class TestFailureIsolation:
    def test_batch_continues_and_counts_reconcile(self, flaky_server):
        _FlakyHandler.always_fail = True
        gw = make_gateway(retries=2, batch_size=2)
        gw.register(MtBackendSpec("h", "http", "en", "zh", model_tag="m", endpoint=flaky_server))
        gw.register(identity_spec("id"))
        texts = ["a b", "c d", "e f"]
        out = gw.translate(texts, "h")
        assert len(out) == len(texts)
        assert sum(o.ok for o in out) + sum(not o.ok for o in out) == len(texts)
        _FlakyHandler.always_fail = False


class TestPurity:
    def test_translate_pure_function_of_text(self):
        rng = random.Random(3)
        texts = [
            " ".join("".join(rng.choice(string.ascii_lowercase) for _ in range(4)) for _ in range(6))
            for _ in range(20)
        ]
        fwd, _ = scramble_pair(seed=21)
        runs = []
        for _ in range(3):
            gw = make_gateway(cache=TranslationCache())
            gw.register(fwd)
            runs.append([o.text for o in gw.translate(texts, "scr-f")])
        assert runs[0] == runs[1] == runs[2]
