"""Emit the supervised finetuning dataset (sharded JSONL) and train manifest."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

from .dataset_builder import PseudoPair
from .prompting import PromptSpec, render_training_record
from .retrieval import ExampleRetriever
from .termbank import TermPair, match_triggers, render_guidance

logger = logging.getLogger(__name__)

SHARD_SIZE = 50_000
PROMPT_CHAR_WARNING = 8_000

SHOT_MODES = ("similar", "random")

# Low-rank adapter finetuning defaults; the trainer must honor them verbatim
# or log an explicit override.
MANIFEST_DEFAULTS = {
    "learning_rate": 2e-4,
    "lora_rank": 512,
    "lora_alpha": 256,
    "dtype": "float16",
    "dropout": 0.05,
    "save_eval_steps": 2000,
}


@dataclass(frozen=True)
class TrainManifest:
    learning_rate: float = MANIFEST_DEFAULTS["learning_rate"]
    lora_rank: int = MANIFEST_DEFAULTS["lora_rank"]
    lora_alpha: int = MANIFEST_DEFAULTS["lora_alpha"]
    dtype: str = MANIFEST_DEFAULTS["dtype"]
    dropout: float = MANIFEST_DEFAULTS["dropout"]
    save_eval_steps: int = MANIFEST_DEFAULTS["save_eval_steps"]
    base_model: str = ""
    dataset_path: str = ""
    seed: int = 0
    dataset_checksum: str = ""
    shards: tuple[str, ...] = ()
    overrides: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in ("learning_rate", "lora_rank", "lora_alpha", "dropout", "save_eval_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_json(self) -> str:
        payload = asdict(self)
        payload["shards"] = list(self.shards)
        payload["overrides"] = list(self.overrides)
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TrainManifest":
        payload = json.loads(text)
        payload["shards"] = tuple(payload.get("shards", ()))
        payload["overrides"] = tuple(payload.get("overrides", ()))
        return cls(**payload)


@dataclass
class EmitResult:
    count: int
    checksum: str
    shard_paths: list[Path]
    manifest_path: Path | None = None
    warnings: list[str] = field(default_factory=list)


def _record_seed(seed: int, pair_id: str) -> int:
    digest = hashlib.sha256(f"{seed}|{pair_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def emit_dataset(
    pairs: Sequence[PseudoPair],
    spec: PromptSpec,
    out_dir: str | Path,
    retriever: ExampleRetriever | None = None,
    bank: Sequence[TermPair] | None = None,
    shot_mode: str = "similar",
    seed: int = 0,
    shard_size: int = SHARD_SIZE,
) -> EmitResult:
    """Write one prompt/completion record per pair, sharded, deterministic.

    Shots come from target-side similarity retrieval (shot_mode="similar")
    or seeded random sampling; either way the pair's own id is excluded.
    Returns the record count and a SHA-256 checksum over all shard bytes.
    """
    if spec.k > 0 and retriever is None:
        raise ValueError("spec.k > 0 requires a retriever")
    if shot_mode not in SHOT_MODES:
        raise ValueError(f"shot_mode must be one of {SHOT_MODES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    ordered = sorted(pairs, key=lambda p: p.id)
    shard_paths: list[Path] = []
    warnings: list[str] = []
    digest = hashlib.sha256()
    fh = None
    count = 0
    try:
        for pair in ordered:
            shots = None
            if spec.k > 0:
                if shot_mode == "similar":
                    shots = retriever.retrieve_train_shots(pair, spec.k)
                else:
                    shots = retriever.retrieve_random_shots(
                        _record_seed(seed, pair.id), spec.k, exclude_id=pair.id
                    )
            matches = ()
            guidance = None
            if spec.include_terms and bank:
                matches = match_triggers(pair.neutral, bank)
                guidance = render_guidance(matches)
            rendered = render_training_record(
                pair, spec, shots=shots, guidance=guidance, term_matches=matches
            )
            if len(rendered.prompt) > PROMPT_CHAR_WARNING:
                warnings.append(f"{pair.id}: prompt length {len(rendered.prompt)} chars")
            line = (
                json.dumps(
                    {
                        "prompt": rendered.prompt,
                        "completion": rendered.completion,
                        "meta": {
                            "pair_id": pair.id,
                            "template": rendered.template.value,
                            "shot_ids": list(rendered.shot_ids),
                            "term_count": len(rendered.term_matches),
                            "domain": pair.domain,
                        },
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
            if count % shard_size == 0:
                if fh is not None:
                    fh.close()
                shard = out_dir / f"ft-{count // shard_size:05d}.jsonl"
                shard_paths.append(shard)
                fh = shard.open("w", encoding="utf-8", newline="\n")
            fh.write(line)
            digest.update(line.encode("utf-8"))
            count += 1
    finally:
        if fh is not None:
            fh.close()
    for message in warnings:
        logger.warning("long prompt: %s", message)
    return EmitResult(count=count, checksum=digest.hexdigest(), shard_paths=shard_paths, warnings=warnings)


def emit_manifest(
    out_path: str | Path,
    base_model: str = "",
    dataset_path: str = "",
    seed: int = 0,
    dataset_checksum: str = "",
    shards: Sequence[str] = (),
    **overrides: float | int | str,
) -> TrainManifest:
    """Write the training manifest; hyperparameters default to the pinned values.

    Any explicitly overridden hyperparameter is recorded in the manifest's
    `overrides` list and logged.
    """
    unknown = set(overrides) - set(MANIFEST_DEFAULTS)
    if unknown:
        raise ValueError(f"unknown manifest overrides: {sorted(unknown)}")
    changed = tuple(
        sorted(name for name, value in overrides.items() if value != MANIFEST_DEFAULTS[name])
    )
    for name in changed:
        logger.info("manifest override: %s=%r (default %r)", name, overrides[name], MANIFEST_DEFAULTS[name])
    manifest = TrainManifest(
        base_model=base_model,
        dataset_path=dataset_path,
        seed=seed,
        dataset_checksum=dataset_checksum,
        shards=tuple(shards),
        overrides=changed,
        **{**MANIFEST_DEFAULTS, **overrides},
    )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(manifest.to_json(), encoding="utf-8")
    return manifest
