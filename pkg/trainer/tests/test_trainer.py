import json
import math

import pytest
import torch

from stylepipe_trainer.lora import (
    LoraLinear,
    apply_lora,
    base_checksum,
    effective_rank,
    load_adapter,
    trainable_parameters,
)
from stylepipe_trainer.model import TinyCausalLM, build_base_model, decode, encode
from stylepipe_trainer.train import HARNESS_DEFAULTS, load_dataset, read_manifest, train

MANIFEST = {
    "learning_rate": 2e-4,
    "lora_rank": 512,
    "lora_alpha": 256,
    "dtype": "float16",
    "dropout": 0.05,
    "save_eval_steps": 2000,
    "base_model": "tiny-causal-lm",
    "seed": 3,
    "dataset_checksum": "",
    "shards": [],
}


@pytest.fixture()
def dataset_dir(tmp_path):
    path = tmp_path / "ft"
    path.mkdir()
    records = [
        {
            "prompt": f"Rewrite the given sentence into the style of demo.\nNow go ahead: Input: plain text {i}. The demo output:",
            "completion": f"styled text {i}",
            "meta": {"pair_id": f"p{i:03d}"},
        }
        for i in range(32)
    ]
    with (path / "ft-00000.jsonl").open("w", encoding="utf-8") as fh:
        for row in records:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    return path


class TestModel:
    def test_byte_codec_roundtrip(self):
        assert decode(encode("hello, wörld")) == "hello, wörld"

    def test_forward_shape(self):
        model = TinyCausalLM(dim=32, n_layers=1, n_heads=2, max_len=64)
        logits = model(torch.zeros((2, 10), dtype=torch.long))
        assert logits.shape == (2, 10, 258)

    def test_build_seeded_deterministic(self):
        a = build_base_model("tiny-causal-lm", seed=5)
        b = build_base_model("tiny-causal-lm", seed=5)
        assert base_checksum(a) == base_checksum(b)


class TestLora:
    def test_only_adapter_params_trainable(self):
        model = build_base_model("tiny-causal-lm", seed=0)
        apply_lora(model, rank=4, alpha=8, dropout=0.0)
        for name, param in model.named_parameters():
            is_adapter = "lora_a" in name or "lora_b" in name
            assert param.requires_grad == is_adapter, name

    def test_zero_init_preserves_function(self):
        base = torch.nn.Linear(8, 8)
        wrapped = LoraLinear(base, rank=2, alpha=4, dropout=0.0)
        x = torch.randn(3, 8)
        assert torch.allclose(wrapped(x), base(x))

    def test_effective_rank_caps_at_width(self):
        assert effective_rank(512, 64) == 64
        assert effective_rank(8, 64) == 8


class TestTrain:
    def test_smoke_ten_steps(self, dataset_dir, tmp_path):
        run = train(MANIFEST, dataset_dir, tmp_path / "run", max_steps=10, verify_checksum=False)
        assert run.steps_completed == 10
        assert len(run.loss_curve) == 10
        assert all(math.isfinite(v) for v in run.loss_curve)
        # decreasing trend: later half strictly below the first recorded loss
        assert sum(run.loss_curve[5:]) / 5 < run.loss_curve[0]
        assert (tmp_path / "run" / "adapter.pt").exists()
        assert (tmp_path / "run" / "train-run.json").exists()
        assert not run.aborted

    def test_base_weights_checksum_unchanged(self, dataset_dir, tmp_path):
        run = train(MANIFEST, dataset_dir, tmp_path / "run", max_steps=10, verify_checksum=False)
        assert run.base_unchanged
        assert run.base_checksum_before == run.base_checksum_after

    def test_adapter_shapes_honor_scaled_rank_and_log_override(self, dataset_dir, tmp_path):
        run = train(MANIFEST, dataset_dir, tmp_path / "run", max_steps=2, verify_checksum=False)
        overridden = {o["field"]: o for o in run.overrides}
        assert "lora_rank" in overridden  # 512 does not fit a dim-64 model
        used_rank = overridden["lora_rank"]["used"]
        assert used_rank == 64
        state = torch.load(tmp_path / "run" / "adapter.pt", weights_only=True)
        for name, tensor in state.items():
            if "lora_a" in name:
                assert tensor.shape[0] == used_rank, name
            if "lora_b" in name:
                assert tensor.shape[1] == used_rank, name
        # alpha override preserves the manifest's alpha/rank scaling factor
        assert overridden["lora_alpha"]["used"] / used_rank == pytest.approx(256 / 512)

    def test_rank_that_fits_is_honored_verbatim(self, dataset_dir, tmp_path):
        manifest = {**MANIFEST, "lora_rank": 8, "lora_alpha": 16}
        run = train(manifest, dataset_dir, tmp_path / "run", max_steps=2, verify_checksum=False)
        fields = {o["field"] for o in run.overrides}
        assert "lora_rank" not in fields and "lora_alpha" not in fields
        state = torch.load(tmp_path / "run" / "adapter.pt", weights_only=True)
        assert all(t.shape[0] == 8 for n, t in state.items() if "lora_a" in n)

    def test_manifest_fidelity_in_run_log(self, dataset_dir, tmp_path):
        train(MANIFEST, dataset_dir, tmp_path / "run", max_steps=2, verify_checksum=False)
        log = json.loads((tmp_path / "run" / "train-run.json").read_text(encoding="utf-8"))
        assert log["manifest"]["learning_rate"] == 2e-4
        assert log["manifest"]["save_eval_steps"] == 2000
        overridden = {o["field"] for o in log["overrides"]}
        for key in ("learning_rate", "dropout", "save_eval_steps"):
            assert key not in overridden
        assert log["harness"] == HARNESS_DEFAULTS

    def test_checkpoints_every_save_eval_steps(self, dataset_dir, tmp_path):
        manifest = {**MANIFEST, "save_eval_steps": 4}
        run = train(manifest, dataset_dir, tmp_path / "run", max_steps=10, verify_checksum=False)
        assert len(run.checkpoints) == 2
        assert (tmp_path / "run" / "checkpoint-000004" / "adapter.pt").exists()
        assert (tmp_path / "run" / "checkpoint-000008" / "adapter.pt").exists()

    def test_checksum_verification(self, dataset_dir, tmp_path):
        manifest = {**MANIFEST, "dataset_checksum": "0" * 64, "shards": ["ft-00000.jsonl"]}
        with pytest.raises(ValueError):
            load_dataset(dataset_dir, manifest, max_seq_len=256)
        load_dataset(dataset_dir, manifest, max_seq_len=256, verify_checksum=False)

    def test_read_manifest_requires_fields(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"learning_rate": 2e-4}), encoding="utf-8")
        with pytest.raises(ValueError):
            read_manifest(path)


class TestAdapterRoundtrip:
    def test_load_adapter_reproduces_trained_weights(self, dataset_dir, tmp_path):
        run = train(MANIFEST, dataset_dir, tmp_path / "run", max_steps=4, verify_checksum=False)
        model = build_base_model("tiny-causal-lm", seed=3)
        config = load_adapter(model, tmp_path / "run")
        assert config["rank"] == 64
        trained = torch.load(run.adapter_path, weights_only=True)
        state = model.state_dict()
        for name, tensor in trained.items():
            assert torch.equal(state[name], tensor), name
