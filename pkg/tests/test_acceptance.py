"""Acceptance suite: one test per release criterion, pass/fail printed.

Run with `pytest tests/test_acceptance.py -v -s`. The trainer smoke
criterion lives in the trainer package's own suite (trainer/tests).
"""

import random
import re
import string
import time

import numpy as np
import pytest

from oracles import brute_force_knn, reference_corpus_bleu
from stylepipe.config import load_config
from stylepipe.dataset_builder import PseudoPair, build_pairs
from stylepipe.demo import generate_demo
from stylepipe.evaluation import (
    EvalReport,
    corpus_bleu,
    logistic_loss_and_grad,
    train_classifier,
)
from stylepipe.inference import GenBackendSpec, GenClient, TransferEngine
from stylepipe.mt_gateway import (
    MtBackendSpec,
    MtGateway,
    PivotRoute,
    RoundtripPipeline,
    invert_mapping,
)
from stylepipe.pipeline import RT_BASELINE_METHOD, run_all
from stylepipe.prompting import PromptSpec, Template, render, template_checksums
from stylepipe.retrieval import ExampleRetriever, VectorIndex
from stylepipe.termbank import build_bank, match_triggers, render_guidance
from test_prompting import PINNED_CHECKSUMS, slot_pattern, shotset
from test_termbank import GUIDANCE_RE, ScriptedLlm
from test_evaluation import BLEU_FIXTURES


def _report(name: str, detail: str = "") -> None:
    suffix = f" ({detail})" if detail else ""
    print(f"[PASS] {name}{suffix}")


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    """Full-size hermetic demo run, shared by the e2e and determinism checks."""
    root = tmp_path_factory.mktemp("acceptance-demo")
    config = load_config(generate_demo(root, seed=7, sentences_per_domain=250))
    started = time.perf_counter()
    results = run_all(config)
    elapsed = time.perf_counter() - started
    return config, results, elapsed


def test_bleu_oracle():
    started = time.perf_counter()
    assert len(BLEU_FIXTURES) >= 5
    for name, (hyps, refs, frozen) in sorted(BLEU_FIXTURES.items()):
        oracle = reference_corpus_bleu([h.split() for h in hyps], [r.split() for r in refs])
        assert oracle == pytest.approx(frozen, abs=1e-12), f"{name}: frozen value drifted"
        assert corpus_bleu(hyps, refs) == pytest.approx(oracle, abs=1e-6), name
    identity = ["an exactly copied sentence here", "and one more of them"]
    assert corpus_bleu(identity, list(identity)) == 100.0
    assert corpus_bleu(["aa bb cc dd"], ["xx yy zz ww"]) == 0.0
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0, f"BLEU oracle took {elapsed:.3f}s"
    _report("BLEU oracle", f"{len(BLEU_FIXTURES)} fixtures, {elapsed * 1000:.0f}ms")


def test_retrieval_oracle():
    started = time.perf_counter()
    rng = random.Random(2024)
    dim = 24
    checked = 0
    for trial in range(100):
        n = rng.randint(2, 1000)
        vectors = []
        for _ in range(n):
            v = np.array([rng.gauss(0, 1) for _ in range(dim)])
            vectors.append(v / np.linalg.norm(v))
        # duplicate a few vectors so the id tie-break is actually exercised
        for d in range(min(5, n // 2)):
            vectors[n - 1 - d] = vectors[d].copy()
        ids = [f"e{i:05d}" for i in range(n)]
        index = VectorIndex(ids, np.stack(vectors), fingerprint="raw")
        query = np.array([rng.gauss(0, 1) for _ in range(dim)])
        query /= np.linalg.norm(query)
        for k in (1, 3, 5, 10):
            expected = [pid for pid, _ in brute_force_knn(ids, vectors, query, k)]
            got = [pid for pid, _ in index.knn(query, k)]
            assert got == expected, f"trial {trial}, k={k}"
            checked += 1
    pairs = [
        PseudoPair(
            id=f"p{i:03d}",
            neutral=f"neutral sentence {i}",
            target=f"styled sentence {i}",
            pivot_lang="zh",
            domain="d",
        )
        for i in range(50)
    ]
    retriever = ExampleRetriever.build(pairs)
    for p in pairs:
        assert p.id not in retriever.retrieve_train_shots(p, 10).ids
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0, f"retrieval oracle took {elapsed:.1f}s"
    _report("Retrieval oracle", f"{checked} knn checks + self-exclusion, {elapsed:.1f}s")


def test_template_fidelity():
    assert template_checksums() == PINNED_CHECKSUMS
    guidance = 'Note that you may want to rewrite "lift" to "elevator" for contextual consistency.'
    cases = 0
    for template in (Template.I, Template.II, Template.III):
        for k in (0, 3, 5):
            for with_guidance in (False, True):
                spec = PromptSpec(
                    style_name="treasury prose",
                    template=template,
                    k=k,
                    include_terms=with_guidance,
                )
                rendered = render(
                    "the query sentence to restyle",
                    spec,
                    shots=shotset(k) if k else None,
                    guidance=guidance if with_guidance else None,
                )
                pattern = slot_pattern(template, k, with_guidance)
                assert pattern.match(rendered.prompt), (template, k, with_guidance)
                cases += 1
    _report("Template fidelity", f"{cases} template/k/guidance combinations")


def test_roundtrip_identity():
    # mock_identity end to end: every pair has neutral == target
    gw = MtGateway(sleep=lambda s: None)
    gw.register(MtBackendSpec("f", "mock_identity", "en", "zh"))
    gw.register(MtBackendSpec("b", "mock_identity", "zh", "en"))
    pipe = RoundtripPipeline(gw, [PivotRoute("zh", "f", "b")])
    from stylepipe.corpus import CorpusRecord

    records = [
        CorpusRecord(id=f"r{i:04d}", text=f"A sentence number {i} to copy.", domain="d", source="s:1")
        for i in range(200)
    ]
    result = build_pairs(records, pipe)
    assert len(result.pairs) == 200
    assert all(p.neutral == p.target for p in result.pairs)

    # mock_scramble forward + inverse-table backward recovers 1,000 sentences
    mapping = {"tax": "shui9", "office": "suo9", "river": "he9", "light": "guang9"}
    gw2 = MtGateway(sleep=lambda s: None)
    gw2.register(MtBackendSpec("sf", "mock_scramble", "en", "zh", seed=77, mapping=mapping))
    gw2.register(
        MtBackendSpec(
            "sb", "mock_scramble", "zh", "en", seed=77, inverse=True, mapping=invert_mapping(mapping)
        )
    )
    pipe2 = RoundtripPipeline(gw2, [PivotRoute("zh", "sf", "sb")])
    rng = random.Random(99)
    vocab = ["tax", "office", "river", "light", "stone", "paper", "window", "garden", "cloud"]
    sentences = []
    for _ in range(1000):
        words = [rng.choice(vocab) for _ in range(rng.randint(1, 14))]
        sentences.append(" ".join(words) + rng.choice(["", ".", "!", "?"]))
    outcomes = pipe2.roundtrip_batch(sentences)
    for sentence, outcome in zip(sentences, outcomes):
        assert not isinstance(outcome, Exception)
        assert outcome.neutral == sentence
    _report("Roundtrip identity", "identity pairs + 1000 scramble/inverse sentences")


def test_call_accounting():
    pairs = [
        PseudoPair(
            id=f"p{i:03d}",
            neutral=f"neutral words number {i}",
            target=f"styled words number {i}",
            pivot_lang="zh",
            domain="d",
        )
        for i in range(30)
    ]

    # route i (RT-first) + sketch-first: exactly 2 MT calls + 2 generation calls
    gw = MtGateway(sleep=lambda s: None)
    gw.register(MtBackendSpec("f", "mock_identity", "en", "zh"))
    gw.register(MtBackendSpec("b", "mock_identity", "zh", "en"))
    engine = TransferEngine(
        gen=GenClient(GenBackendSpec("g", "mock_echo")),
        spec=PromptSpec(style_name="styled", k=5),
        retriever=ExampleRetriever.build(pairs),
        roundtripper=RoundtripPipeline(gw, [PivotRoute("zh", "f", "b")]),
        route="rt_first",
        shot_mode="similar",
        seed=3,
    )
    engine.transfer("an uncached query sentence")
    assert gw.total_backend_calls == 2, f"MT calls: {gw.total_backend_calls}"
    assert engine.gen.calls == 2, f"generation calls: {engine.gen.calls}"

    # route ii (direct) + 0-shot: exactly 1 generation call, no MT
    direct = TransferEngine(
        gen=GenClient(GenBackendSpec("g", "mock_echo")),
        spec=PromptSpec(style_name="styled", k=0),
        route="direct",
    )
    direct.transfer("another query")
    assert direct.gen.calls == 1
    _report("Call accounting", "rt_first+sketch: 2 MT + 2 gen; direct 0-shot: 1 gen")


def test_termbank_recovery_and_triggers():
    planted = {f"plain{i:02d}": f"ornate{i:02d}" for i in range(20)}
    sources = sorted(planted)
    pairs = []
    idx = 0
    for repeat in range(3):  # support 3 >= min_support 2
        for src in sources:
            tgt = planted[src]
            pairs.append(
                PseudoPair(
                    id=f"p{idx:04d}",
                    neutral=f"the {src} form sits on the desk today",
                    target=f"the {tgt} form sits on the desk today",
                    pivot_lang="zh",
                    domain="d",
                )
            )
            idx += 1
    bank = build_bank(pairs, ScriptedLlm(planted), min_support=2)
    recovered = {(b.source_term, b.target_term) for b in bank}
    expected = set(planted.items())
    precision = len(recovered & expected) / len(recovered)
    recall = len(recovered & expected) / len(expected)
    assert precision == 1.0 and recall == 1.0, (precision, recall)
    assert all(b.support == 3 for b in bank)

    rng = random.Random(1)
    checked = 0
    for qi in range(50):
        chosen = rng.sample(sources, rng.randint(1, 3))
        query = "We should review " + " and ".join(chosen) + " before lunch."
        matches = match_triggers(query, bank)
        expected_spans = sorted((query.index(src), query.index(src) + len(src)) for src in chosen)
        assert [(m.start, m.end) for m in matches] == expected_spans, query
        guidance = render_guidance(matches)
        assert guidance is not None and GUIDANCE_RE.match(guidance), guidance
        for m in matches:
            assert f'"{m.pair.source_term}" to "{m.pair.target_term}"' in guidance
        checked += 1
    assert checked == 50
    _report("Termbank", "20/20 planted mappings, P=R=1.0, 50 trigger queries")


def test_classifier_criteria():
    # gradient vs central finite differences, 1e-5 relative
    rng = np.random.default_rng(3)
    for _ in range(3):
        n, dim = 10, 6
        X = rng.normal(size=(n, dim))
        y = (rng.random(n) > 0.5).astype(np.float64)
        w = rng.normal(size=dim) * 0.3
        b = float(rng.normal()) * 0.3
        _, gw_vec, gb = logistic_loss_and_grad(w, b, X, y, l2=1e-4)
        eps = 1e-6
        for j in range(dim):
            wp, wm = w.copy(), w.copy()
            wp[j] += eps
            wm[j] -= eps
            lp, _, _ = logistic_loss_and_grad(wp, b, X, y, 1e-4)
            lm, _, _ = logistic_loss_and_grad(wm, b, X, y, 1e-4)
            numeric = (lp - lm) / (2 * eps)
            assert abs(gw_vec[j] - numeric) <= 1e-5 * max(1.0, abs(numeric))

    # disjoint vocabularies: validation accuracy >= 0.95
    rng2 = random.Random(8)
    formal = [" ".join(rng2.choice([f"formal{i}" for i in range(40)]) for _ in range(9)) for _ in range(500)]
    informal = [" ".join(rng2.choice([f"slang{i}" for i in range(40)]) for _ in range(9)) for _ in range(500)]
    _, stats = train_classifier(formal, informal, seed=5, dim=2**12)
    assert stats.validation_accuracy >= 0.95, stats.validation_accuracy

    # identical distributions: validation accuracy within 0.5 +/- 0.1
    vocab = list(string.ascii_lowercase[:8])
    a = [" ".join(rng2.choice(vocab) for _ in range(8)) for _ in range(150)]
    b = [" ".join(rng2.choice(vocab) for _ in range(8)) for _ in range(150)]
    _, chance = train_classifier(a, b, seed=6, dim=1024)
    assert abs(chance.validation_accuracy - 0.5) <= 0.1, chance.validation_accuracy
    _report(
        "Classifier",
        f"gradcheck ok, disjoint val acc {stats.validation_accuracy:.3f}, "
        f"chance val acc {chance.validation_accuracy:.3f}",
    )


def test_end_to_end_hermetic_run(demo_run):
    config, results, elapsed = demo_run
    assert all(r.status == "ok" for r in results), [(r.stage, r.status) for r in results]
    assert elapsed < 60.0, f"demo took {elapsed:.1f}s"
    report = EvalReport.from_json(
        (config.out_path / "report" / "report.json").read_text(encoding="utf-8")
    )
    transfer_methods = [m for m in report.methods if m != RT_BASELINE_METHOD]
    assert RT_BASELINE_METHOD in report.methods and transfer_methods
    for domain in report.domains:
        baseline = report.row(RT_BASELINE_METHOD, domain)
        transferred = report.row(transfer_methods[0], domain)
        assert transferred.acc > baseline.acc, (
            f"{domain}: transfer acc {transferred.acc} !> baseline {baseline.acc}"
        )
    _report("End-to-end hermetic run", f"{elapsed:.1f}s, transfer acc beats RT baseline in all domains")


def test_determinism(demo_run, tmp_path_factory):
    config, _, _ = demo_run
    other_root = tmp_path_factory.mktemp("acceptance-demo-rerun")
    other = load_config(generate_demo(other_root, seed=7, sentences_per_domain=250))
    run_all(other)
    compared = []
    for rel in (
        "pairs/fiscal.jsonl",
        "pairs/saga.jsonl",
        "ft/fiscal/ft-00000.jsonl",
        "ft/saga/ft-00000.jsonl",
        "index/fiscal.idx",
        "index/saga.idx",
        "termbank/fiscal.jsonl",
        "termbank/saga.jsonl",
        "report/report.json",
        "report/report.csv",
        "report/report.md",
    ):
        assert (config.out_path / rel).read_bytes() == (other.out_path / rel).read_bytes(), rel
        compared.append(rel)
    _report("Determinism", f"{len(compared)} artifacts byte-identical across runs")
