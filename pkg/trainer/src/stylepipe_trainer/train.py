"""Training loop: frozen base, adapter-only gradients, manifest fidelity.

Every hyperparameter comes from the manifest; anything the harness cannot
honor (fp16 on CPU, rank above model width) is overridden explicitly and the
override is recorded in the run log next to the manifest value.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .lora import (
    apply_lora,
    base_checksum,
    effective_rank,
    save_adapter,
    trainable_parameters,
)
from .model import EOS_ID, PAD_ID, build_base_model, encode

logger = logging.getLogger(__name__)

RUN_LOG_FILE = "train-run.json"

# Settings the manifest does not specify; recorded in the run log.
HARNESS_DEFAULTS = {"batch_size": 4, "max_seq_len": 256, "grad_clip": 1.0}


@dataclass
class Example:
    prompt_ids: list[int]
    completion_ids: list[int]


@dataclass
class TrainRun:
    manifest: dict
    steps_completed: int
    loss_curve: list[float]
    adapter_path: str
    base_checksum_before: str
    base_checksum_after: str
    overrides: list[dict] = field(default_factory=list)
    aborted: bool = False
    checkpoints: list[str] = field(default_factory=list)

    @property
    def base_unchanged(self) -> bool:
        return self.base_checksum_before == self.base_checksum_after

    def to_json(self) -> str:
        payload = {
            "manifest": self.manifest,
            "steps_completed": self.steps_completed,
            "loss_curve": self.loss_curve,
            "adapter_path": self.adapter_path,
            "base_checksum_before": self.base_checksum_before,
            "base_checksum_after": self.base_checksum_after,
            "overrides": self.overrides,
            "aborted": self.aborted,
            "checkpoints": self.checkpoints,
            "harness": HARNESS_DEFAULTS,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def read_manifest(path: str | Path) -> dict:
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    required = ("learning_rate", "lora_rank", "lora_alpha", "dtype", "dropout", "save_eval_steps")
    missing = [key for key in required if key not in manifest]
    if missing:
        raise ValueError(f"manifest missing fields: {missing}")
    return manifest


def load_dataset(dataset_dir: str | Path, manifest: dict, max_seq_len: int, verify_checksum: bool = True) -> list[Example]:
    """Read the emitted prompt/completion shards; optionally verify checksum."""
    dataset_dir = Path(dataset_dir)
    shards = manifest.get("shards") or sorted(p.name for p in dataset_dir.glob("ft-*.jsonl"))
    if not shards:
        raise ValueError(f"no dataset shards found in {dataset_dir}")
    digest = hashlib.sha256()
    examples: list[Example] = []
    for shard in shards:
        path = dataset_dir / shard
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                digest.update(line.encode("utf-8"))
                row = json.loads(line)
                prompt_ids = encode(row["prompt"] + " ")
                completion_ids = encode(row["completion"]) + [EOS_ID]
                total = len(prompt_ids) + len(completion_ids)
                if total > max_seq_len:
                    overflow = total - max_seq_len
                    prompt_ids = prompt_ids[overflow:]
                examples.append(Example(prompt_ids=prompt_ids, completion_ids=completion_ids))
    expected = manifest.get("dataset_checksum", "")
    if verify_checksum and expected and digest.hexdigest() != expected:
        raise ValueError(
            f"dataset checksum mismatch: manifest says {expected[:12]}..., shards hash to {digest.hexdigest()[:12]}..."
        )
    return examples


def _batchify(examples: list[Example], indices: list[int]) -> tuple[torch.Tensor, torch.Tensor]:
    rows = [examples[i] for i in indices]
    max_len = max(len(r.prompt_ids) + len(r.completion_ids) for r in rows)
    ids = torch.full((len(rows), max_len), PAD_ID, dtype=torch.long)
    labels = torch.full((len(rows), max_len), -100, dtype=torch.long)
    for i, row in enumerate(rows):
        seq = row.prompt_ids + row.completion_ids
        ids[i, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        start = len(row.prompt_ids)
        labels[i, start : len(seq)] = torch.tensor(row.completion_ids, dtype=torch.long)
    return ids, labels


def train(
    manifest: dict,
    dataset_dir: str | Path,
    out_dir: str | Path,
    max_steps: int = 100,
    verify_checksum: bool = True,
) -> TrainRun:
    """Train adapters per the manifest; returns the run record.

    Only adapter parameters receive gradients. A non-finite loss aborts the
    run, keeping the last good checkpoint as the artifact.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    overrides: list[dict] = []

    dtype = manifest["dtype"]
    if dtype != "float32" and not torch.cuda.is_available():
        overrides.append({"field": "dtype", "manifest": dtype, "used": "float32", "reason": "CPU training"})
        dtype = "float32"

    seed = int(manifest.get("seed", 0))
    model = build_base_model(manifest.get("base_model", "tiny-causal-lm"), seed=seed)

    rank = int(manifest["lora_rank"])
    used_rank = effective_rank(rank, model.dim)
    if used_rank != rank:
        overrides.append(
            {"field": "lora_rank", "manifest": rank, "used": used_rank, "reason": "scaled to model width"}
        )
    alpha = float(manifest["lora_alpha"])
    used_alpha = alpha
    if used_rank != rank:
        # keep the alpha/rank scaling factor the manifest implies
        used_alpha = alpha * used_rank / rank
        overrides.append(
            {"field": "lora_alpha", "manifest": alpha, "used": used_alpha, "reason": "preserve alpha/rank ratio"}
        )
    for override in overrides:
        logger.info(
            "override %s: manifest %r -> %r (%s)",
            override["field"], override["manifest"], override["used"], override["reason"],
        )

    adapted = apply_lora(model, rank=used_rank, alpha=used_alpha, dropout=float(manifest["dropout"]))
    logger.info("adapted %d linear layers at rank %d", len(adapted), used_rank)
    checksum_before = base_checksum(model)

    examples = load_dataset(
        dataset_dir, manifest, max_seq_len=HARNESS_DEFAULTS["max_seq_len"], verify_checksum=verify_checksum
    )
    if not examples:
        raise ValueError("dataset is empty")

    optimizer = torch.optim.AdamW(trainable_parameters(model), lr=float(manifest["learning_rate"]))
    rng = torch.Generator().manual_seed(seed)
    batch_size = HARNESS_DEFAULTS["batch_size"]
    save_every = int(manifest["save_eval_steps"])

    adapter_config = {
        "rank": used_rank,
        "alpha": used_alpha,
        "dropout": float(manifest["dropout"]),
        "base_model": manifest.get("base_model", "tiny-causal-lm"),
        "seed": seed,
        "adapted_layers": adapted,
    }

    loss_curve: list[float] = []
    checkpoints: list[str] = []
    aborted = False
    step = 0
    model.train()
    while step < max_steps:
        indices = torch.randperm(len(examples), generator=rng).tolist()
        for start in range(0, len(indices), batch_size):
            if step >= max_steps:
                break
            ids, labels = _batchify(examples, indices[start : start + batch_size])
            logits = model(ids)
            loss = F.cross_entropy(logits[:, :-1].reshape(-1, logits.shape[-1]), labels[:, 1:].reshape(-1))
            loss_value = float(loss.detach())
            if not math.isfinite(loss_value):
                logger.error("non-finite loss at step %d; aborting with last-good checkpoint", step)
                aborted = True
                break
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(trainable_parameters(model), HARNESS_DEFAULTS["grad_clip"])
            optimizer.step()
            loss_curve.append(loss_value)
            step += 1
            if step % save_every == 0:
                ckpt_dir = out_dir / f"checkpoint-{step:06d}"
                save_adapter(model, ckpt_dir, {**adapter_config, "step": step})
                checkpoints.append(str(ckpt_dir))
                logger.info("step %d: loss %.4f, checkpoint saved", step, loss_curve[-1])
        if aborted:
            break

    if not aborted:
        adapter_path = save_adapter(model, out_dir, {**adapter_config, "step": step})
    elif checkpoints:
        adapter_path = Path(checkpoints[-1]) / "adapter.pt"
    else:
        raise RuntimeError("training aborted before any checkpoint was saved")

    run = TrainRun(
        manifest=manifest,
        steps_completed=step,
        loss_curve=loss_curve,
        adapter_path=str(adapter_path),
        base_checksum_before=checksum_before,
        base_checksum_after=base_checksum(model),
        overrides=overrides,
        aborted=aborted,
        checkpoints=checkpoints,
    )
    (out_dir / RUN_LOG_FILE).write_text(run.to_json(), encoding="utf-8")
    logger.info(
        "trained %d steps, loss %.4f -> %.4f, base unchanged: %s",
        step,
        loss_curve[0] if loss_curve else float("nan"),
        loss_curve[-1] if loss_curve else float("nan"),
        run.base_unchanged,
    )
    return run
