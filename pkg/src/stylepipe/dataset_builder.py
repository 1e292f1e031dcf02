"""Pair in-domain sentences with roundtrip-neutralized counterparts.

The pseudo-parallel corpus is the supervision unit of the whole pipeline:
the neutral side is the model input domain, the target side is the original
styled sentence, byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import CorpusRecord, StyleDomain
from .mt_gateway import RoundtripError, RoundtripPipeline

logger = logging.getLogger(__name__)

DEGRADED_FAILURE_RATE = 0.2

TRIVIAL_PAIR = "trivial_pair"


@dataclass(frozen=True)
class PseudoPair:
    """One (style-neutral, in-style) sentence pair."""

    id: str
    neutral: str
    target: str
    pivot_lang: str
    domain: str
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.neutral or not self.target:
            raise ValueError("both pair sides must be nonempty")


@dataclass(frozen=True)
class PairFilterPolicy:
    """Bitext sanity bounds; ratio is neutral/target token counts, inclusive."""

    min_ratio: float = 0.5
    max_ratio: float = 2.0
    min_neutral_tokens: int = 2


DEFAULT_PAIR_FILTER = PairFilterPolicy()


@dataclass
class PairBuildResult:
    pairs: list[PseudoPair]
    attempted: int
    failures: list[tuple[str, str, str]] = field(default_factory=list)  # (id, stage, detail)

    @property
    def failure_rate(self) -> float:
        return len(self.failures) / self.attempted if self.attempted else 0.0

    @property
    def degraded(self) -> bool:
        return self.failure_rate > DEGRADED_FAILURE_RATE


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/heldout-classifier/test assignment of record ids.

    `train` holds pair ids (records with a surviving roundtrip); the held-out
    buckets hold record ids and never appear in training pairs. Records
    hashed to the train bucket whose roundtrip failed are listed in
    `unpaired` and belong to no partition.
    """

    train: tuple[str, ...]
    heldout_classifier: tuple[str, ...]
    test: tuple[str, ...]
    unpaired: tuple[str, ...] = ()


def _split_unit(record_id: str) -> float:
    digest = hashlib.sha256(f"split|{record_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def assign_bucket(record_id: str, heldout_fraction: float) -> str:
    """Deterministic bucket for a record id: train, heldout_classifier, or test."""
    u = _split_unit(record_id)
    if u < heldout_fraction / 2:
        return "heldout_classifier"
    if u < heldout_fraction:
        return "test"
    return "train"


def pair_records(
    records: Sequence[CorpusRecord],
    roundtrips: dict[str, object],
) -> PairBuildResult:
    """Assemble pairs from precomputed roundtrip results keyed by record id."""
    pairs: list[PseudoPair] = []
    failures: list[tuple[str, str, str]] = []
    for rec in records:
        rt = roundtrips.get(rec.id)
        if rt is None:
            failures.append((rec.id, "missing", "no roundtrip result"))
            continue
        if isinstance(rt, RoundtripError):
            failures.append((rec.id, rt.stage, rt.detail))
            continue
        flags = (TRIVIAL_PAIR,) if rt.neutral == rec.text else ()
        pairs.append(
            PseudoPair(
                id=rec.id,
                neutral=rt.neutral,
                target=rec.text,
                pivot_lang=rt.pivot_lang,
                domain=rec.domain,
                flags=flags,
            )
        )
    pairs.sort(key=lambda p: p.id)
    result = PairBuildResult(pairs=pairs, attempted=len(records), failures=failures)
    if result.degraded:
        logger.warning(
            "pair build degraded: %d/%d roundtrips failed",
            len(failures), len(records),
        )
    return result


def build_pairs(
    records: Sequence[CorpusRecord],
    pipeline: RoundtripPipeline,
    pivot: str | None = None,
) -> PairBuildResult:
    """Roundtrip every record and pair it with its neutral counterpart.

    Per-record roundtrip failures are collected, never fatal; a failure rate
    above 20% marks the result degraded. The target side of each pair is the
    record text verbatim. Output is sorted by id for determinism.
    """
    if not records:
        return PairBuildResult(pairs=[], attempted=0)
    outcomes = pipeline.roundtrip_batch([r.text for r in records], pivot)
    return pair_records(records, {r.id: rt for r, rt in zip(records, outcomes)})


def filter_pairs_verbose(
    pairs: Iterable[PseudoPair],
    policy: PairFilterPolicy = DEFAULT_PAIR_FILTER,
) -> tuple[list[PseudoPair], list[tuple[PseudoPair, str]]]:
    kept: list[PseudoPair] = []
    drops: list[tuple[PseudoPair, str]] = []
    for pair in pairs:
        n_neutral = len(pair.neutral.split())
        n_target = len(pair.target.split())
        ratio = n_neutral / n_target if n_target else 0.0
        if n_neutral < policy.min_neutral_tokens:
            drops.append((pair, "neutral_too_short"))
        elif ratio < policy.min_ratio or ratio > policy.max_ratio:
            drops.append((pair, "length_ratio"))
        else:
            kept.append(pair)
    for pair, reason in drops:
        logger.debug("drop pair %s (%s)", pair.id, reason)
    return kept, drops


def filter_pairs(
    pairs: Iterable[PseudoPair],
    policy: PairFilterPolicy = DEFAULT_PAIR_FILTER,
) -> list[PseudoPair]:
    """Drop pairs outside the length-ratio band or with a too-short neutral side."""
    kept, _ = filter_pairs_verbose(pairs, policy)
    return kept


def split(
    pairs: Sequence[PseudoPair],
    records: Sequence[CorpusRecord],
    domain: StyleDomain,
) -> DatasetSplit:
    """Deterministically partition records into train / classifier-heldout / test.

    Driven purely by hashing record ids against the domain's heldout
    fraction, so the same corpus always splits the same way. Classifier and
    test buckets are drawn from records regardless of roundtrip success;
    the train partition keeps only ids that actually have pairs.
    """
    pair_ids = {p.id for p in pairs}
    train: list[str] = []
    heldout: list[str] = []
    test: list[str] = []
    unpaired: list[str] = []
    for rec in records:
        if rec.domain != domain.name:
            continue
        bucket = assign_bucket(rec.id, domain.heldout_fraction)
        if bucket == "heldout_classifier":
            heldout.append(rec.id)
        elif bucket == "test":
            test.append(rec.id)
        elif rec.id in pair_ids:
            train.append(rec.id)
        else:
            unpaired.append(rec.id)
    return DatasetSplit(
        train=tuple(sorted(train)),
        heldout_classifier=tuple(sorted(heldout)),
        test=tuple(sorted(test)),
        unpaired=tuple(sorted(unpaired)),
    )


def write_pairs_jsonl(pairs: Iterable[PseudoPair], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(
                json.dumps(
                    {
                        "id": p.id,
                        "neutral": p.neutral,
                        "target": p.target,
                        "pivot_lang": p.pivot_lang,
                        "domain": p.domain,
                        "flags": list(p.flags),
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def read_pairs_jsonl(path: str | Path) -> list[PseudoPair]:
    pairs = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            pairs.append(
                PseudoPair(
                    id=row["id"],
                    neutral=row["neutral"],
                    target=row["target"],
                    pivot_lang=row["pivot_lang"],
                    domain=row["domain"],
                    flags=tuple(row.get("flags", ())),
                )
            )
    return pairs


def write_split_json(split_result: DatasetSplit, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "train": list(split_result.train),
        "heldout_classifier": list(split_result.heldout_classifier),
        "test": list(split_result.test),
        "unpaired": list(split_result.unpaired),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_split_json(path: str | Path) -> DatasetSplit:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return DatasetSplit(
        train=tuple(payload["train"]),
        heldout_classifier=tuple(payload["heldout_classifier"]),
        test=tuple(payload["test"]),
        unpaired=tuple(payload.get("unpaired", ())),
    )
