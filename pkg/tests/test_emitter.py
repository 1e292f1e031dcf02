import json

import pytest

from stylepipe.dataset_builder import PseudoPair
from stylepipe.emitter import (
    MANIFEST_DEFAULTS,
    TrainManifest,
    emit_dataset,
    emit_manifest,
)
from stylepipe.prompting import PromptSpec, Template
from stylepipe.retrieval import ExampleRetriever
from stylepipe.termbank import TermPair


def pair(i):
    return PseudoPair(
        id=f"p{i:04d}",
        neutral=f"the plain form of sentence number {i} goes here",
        target=f"the ornate form of sentence number {i} goes here",
        pivot_lang="zh",
        domain="lit",
    )


def spec(k=0, include_terms=False):
    return PromptSpec(style_name="lit", template=Template.I, k=k, include_terms=include_terms)


def read_records(paths):
    records = []
    for path in paths:
        with path.open() as fh:
            records += [json.loads(line) for line in fh]
    return records


class TestEmitDataset:
    def test_zero_shot_contains_no_example_header(self, tmp_path):
        pairs = [pair(i) for i in range(100)]
        result = emit_dataset(pairs, spec(k=0), tmp_path / "out")
        assert result.count == 100
        records = read_records(result.shard_paths)
        assert len(records) == 100
        assert all("Here are" not in r["prompt"] for r in records)

    def test_similar_shots_exclude_own_pair(self, tmp_path):
        pairs = [pair(i) for i in range(100)]
        retriever = ExampleRetriever.build(pairs)
        result = emit_dataset(pairs, spec(k=3), tmp_path / "out", retriever=retriever)
        for record in read_records(result.shard_paths):
            assert record["meta"]["pair_id"] not in record["meta"]["shot_ids"]
            assert len(record["meta"]["shot_ids"]) == 3

    def test_random_shots_exclude_own_pair(self, tmp_path):
        pairs = [pair(i) for i in range(30)]
        retriever = ExampleRetriever.build(pairs)
        result = emit_dataset(
            pairs, spec(k=5), tmp_path / "out", retriever=retriever, shot_mode="random", seed=3
        )
        for record in read_records(result.shard_paths):
            assert record["meta"]["pair_id"] not in record["meta"]["shot_ids"]

    def test_reemit_identical_checksum(self, tmp_path):
        pairs = [pair(i) for i in range(60)]
        retriever = ExampleRetriever.build(pairs)
        bank = [TermPair(source_term="plain", target_term="ornate", domain="lit", support=5)]
        first = emit_dataset(
            pairs, spec(k=3, include_terms=True), tmp_path / "a", retriever=retriever, bank=bank, seed=9
        )
        second = emit_dataset(
            pairs, spec(k=3, include_terms=True), tmp_path / "b", retriever=retriever, bank=bank, seed=9
        )
        assert first.checksum == second.checksum
        assert (tmp_path / "a" / "ft-00000.jsonl").read_bytes() == (
            tmp_path / "b" / "ft-00000.jsonl"
        ).read_bytes()

    def test_record_count_equals_pair_count(self, tmp_path):
        pairs = [pair(i) for i in range(37)]
        result = emit_dataset(pairs, spec(k=0), tmp_path / "out")
        assert result.count == len(pairs)

    def test_sharding(self, tmp_path):
        pairs = [pair(i) for i in range(25)]
        result = emit_dataset(pairs, spec(k=0), tmp_path / "out", shard_size=10)
        assert [p.name for p in result.shard_paths] == ["ft-00000.jsonl", "ft-00001.jsonl", "ft-00002.jsonl"]
        assert sum(len(read_records([p])) for p in result.shard_paths) == 25

    def test_term_guidance_threaded_through(self, tmp_path):
        pairs = [pair(i) for i in range(5)]
        bank = [TermPair(source_term="plain", target_term="ornate", domain="lit", support=9)]
        result = emit_dataset(pairs, spec(k=0, include_terms=True), tmp_path / "out", bank=bank)
        for record in read_records(result.shard_paths):
            assert 'rewrite "plain" to "ornate"' in record["prompt"]
            assert record["meta"]["term_count"] == 1

    def test_prompt_ends_with_template_cue(self, tmp_path):
        pairs = [pair(i) for i in range(4)]
        result = emit_dataset(pairs, spec(k=0), tmp_path / "out")
        for record in read_records(result.shard_paths):
            assert record["prompt"].endswith("output:")
            assert record["completion"]

    def test_k_without_retriever_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_dataset([pair(0)], spec(k=2), tmp_path / "out")


class TestManifest:
    def test_defaults_exact(self, tmp_path):
        manifest = emit_manifest(tmp_path / "manifest.json", base_model="tiny")
        assert manifest.learning_rate == 2e-4
        assert manifest.lora_rank == 512
        assert manifest.lora_alpha == 256
        assert manifest.dtype == "float16"
        assert manifest.dropout == 0.05
        assert manifest.save_eval_steps == 2000
        assert manifest.overrides == ()

    def test_defaults_dict_pinned(self):
        assert MANIFEST_DEFAULTS == {
            "learning_rate": 2e-4,
            "lora_rank": 512,
            "lora_alpha": 256,
            "dtype": "float16",
            "dropout": 0.05,
            "save_eval_steps": 2000,
        }

    def test_roundtrips_through_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        manifest = emit_manifest(path, base_model="tiny", seed=3, dataset_checksum="abc")
        assert TrainManifest.from_json(path.read_text()) == manifest

    def test_override_recorded(self, tmp_path):
        manifest = emit_manifest(tmp_path / "m.json", lora_rank=8)
        assert manifest.lora_rank == 8
        assert manifest.overrides == ("lora_rank",)

    def test_unknown_override_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_manifest(tmp_path / "m.json", warp_factor=9)

    def test_nonpositive_values_rejected(self):
        with pytest.raises(ValueError):
            TrainManifest(lora_rank=0)
