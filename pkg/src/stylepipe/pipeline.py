"""Stage orchestration: ingest -> roundtrip -> ... -> report, with manifests.

Every stage writes a manifest recording the checksums of its inputs and
outputs plus the semantic config fingerprint. A rerun whose inputs,
fingerprint, and outputs all match is skipped; a stage whose input no longer
matches the checksum its producer recorded fails loudly, naming the file.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import corpus as corpus_mod
from . import dataset_builder as db
from . import emitter as emitter_mod
from . import termbank as termbank_mod
from .config import RunConfig
from .evaluation import (
    BleuConfig,
    EvalReport,
    ReportRow,
    build_report,
    corpus_bleu,
    style_accuracy,
    train_classifier,
)
from .inference import GenClient, TransferEngine, TransferResult
from .mt_gateway import MtGateway, PivotRoute, RoundtripError, RoundtripPipeline, RoundtripResult, TranslationCache
from .prompting import PromptSpec, Template
from .retrieval import ExampleRetriever, HashedTfidfEmbedder

logger = logging.getLogger(__name__)

STAGES = (
    "ingest",
    "roundtrip",
    "build-dataset",
    "index",
    "termbank",
    "emit-ft",
    "infer",
    "evaluate",
    "report",
)

RT_BASELINE_METHOD = "RT output (no transfer)"


class PipelineError(RuntimeError):
    pass


class ChecksumMismatch(PipelineError):
    def __init__(self, path: Path, expected: str, actual: str, producer: str):
        super().__init__(
            f"checksum mismatch for {path}: stage {producer!r} recorded {expected[:12]}..., "
            f"found {actual[:12]}... (file was modified; rerun with --force or rebuild)"
        )
        self.path = path


@dataclass
class StageResult:
    stage: str
    status: str  # ok | skipped | degraded
    outputs: list[Path] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.status not in ("ok", "skipped", "degraded")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


class StageRunner:
    """Generic manifest-keeping wrapper around stage bodies."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = config.out_path
        self.manifest_dir = self.out / "manifests"

    def _manifest_path(self, stage: str) -> Path:
        return self.manifest_dir / f"{stage}.json"

    def _read_manifest(self, stage: str) -> dict | None:
        path = self._manifest_path(stage)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def _label(self, path: Path) -> str:
        try:
            return str(path.resolve().relative_to(self.out.resolve()))
        except ValueError:
            return f"src:{path.name}"

    def _verify_upstream(self, inputs: Sequence[Path]) -> None:
        recorded: dict[str, tuple[str, str]] = {}
        for stage in STAGES:
            manifest = self._read_manifest(stage)
            if manifest:
                for label, checksum in manifest.get("outputs", {}).items():
                    recorded[label] = (checksum, stage)
        for path in inputs:
            label = self._label(path)
            if label in recorded:
                expected, producer = recorded[label]
                actual = _sha256(path)
                if actual != expected:
                    raise ChecksumMismatch(path, expected, actual, producer)

    def run(
        self,
        stage: str,
        inputs: Sequence[Path],
        body: Callable[[], tuple[list[Path], dict, str]],
        force: bool = False,
    ) -> StageResult:
        inputs = [Path(p) for p in inputs]
        missing = [p for p in inputs if not p.exists()]
        if missing:
            raise PipelineError(f"stage {stage!r}: missing input file(s): {missing}")
        self._verify_upstream(inputs)

        fingerprint = self.config.fingerprint()
        input_hashes = {self._label(p): _sha256(p) for p in inputs}
        manifest = self._read_manifest(stage)
        if manifest and not force:
            if (
                manifest.get("config_fingerprint") == fingerprint
                and manifest.get("inputs") == input_hashes
                and manifest.get("status") in ("ok", "degraded")
            ):
                outputs_ok = all(
                    (self.out / label).exists() and _sha256(self.out / label) == checksum
                    for label, checksum in manifest.get("outputs", {}).items()
                )
                if outputs_ok:
                    logger.info("stage %s: up to date, skipping", stage)
                    return StageResult(
                        stage=stage,
                        status="skipped",
                        outputs=[self.out / label for label in manifest.get("outputs", {})],
                        details=manifest.get("details", {}),
                    )

        outputs, details, status = body()
        output_hashes = {self._label(p): _sha256(p) for p in outputs}
        self.manifest_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "stage": stage,
            "config_fingerprint": fingerprint,
            "inputs": input_hashes,
            "outputs": output_hashes,
            "status": status,
            "details": details,
        }
        self._manifest_path(stage).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        logger.info("stage %s: %s", stage, status)
        return StageResult(stage=stage, status=status, outputs=list(outputs), details=details)


# ---------------------------------------------------------------------------
# shared loaders

def _corpus_path(config: RunConfig, domain: str) -> Path:
    return config.out_path / "corpus" / f"{domain}.jsonl"


def _rt_path(config: RunConfig, domain: str) -> Path:
    return config.out_path / "rt" / f"{domain}.jsonl"


def _pairs_path(config: RunConfig, domain: str) -> Path:
    return config.out_path / "pairs" / f"{domain}.jsonl"


def _split_path(config: RunConfig, domain: str) -> Path:
    return config.out_path / "splits" / f"{domain}.json"


def _index_path(config: RunConfig, domain: str) -> Path:
    return config.out_path / "index" / f"{domain}.idx"


def _bank_path(config: RunConfig, domain: str) -> Path:
    return config.out_path / "termbank" / f"{domain}.jsonl"


def _ft_dir(config: RunConfig, domain: str) -> Path:
    return config.out_path / "ft" / domain


def _infer_path(config: RunConfig, domain: str) -> Path:
    return config.out_path / "infer" / f"{domain}.jsonl"


def build_gateway(config: RunConfig) -> tuple[MtGateway, RoundtripPipeline]:
    cache = TranslationCache(config.out_path / "cache" / "mt.jsonl")
    gateway = MtGateway(
        cache=cache,
        batch_size=config.mt_batch_size,
        max_in_flight=config.mt_max_in_flight,
    )
    routes = []
    for pivot in config.pivots:
        gateway.register(pivot.forward)
        gateway.register(pivot.backward)
        routes.append(
            PivotRoute(pivot.code, pivot.forward.backend_id, pivot.backward.backend_id)
        )
    return gateway, RoundtripPipeline(gateway, routes, default_pivot=config.default_pivot)


def prompt_spec(config: RunConfig, style_name: str) -> PromptSpec:
    return PromptSpec(
        style_name=style_name,
        template=Template(config.template),
        k=config.k,
        include_terms=config.include_terms,
        shot_order=config.shot_order,
    )


def _train_pairs(config: RunConfig, domain: str) -> list[db.PseudoPair]:
    pairs = db.read_pairs_jsonl(_pairs_path(config, domain))
    split = db.read_split_json(_split_path(config, domain))
    train_ids = set(split.train)
    return [p for p in pairs if p.id in train_ids]


def method_label(config: RunConfig) -> str:
    prefix = "RT & " if config.route == "rt_first" else ""
    label = f"{prefix}{config.infer_shot_mode} {config.k}-shot"
    if config.include_terms and config.termbank_enabled:
        label += " w/ terminology"
    return label


# ---------------------------------------------------------------------------
# stage bodies

def _stage_ingest(config: RunConfig) -> tuple[list[Path], dict, str]:
    outputs: list[Path] = []
    stats: dict[str, dict] = {}
    policy = config.clean_policy
    for dc in config.domains:
        records: list[corpus_mod.CorpusRecord] = []
        for file_ref in dc.corpus_files:
            path = config.resolve(file_ref)
            records.extend(corpus_mod.ingest(path, dc.domain, source_name=Path(file_ref).name))
        ids = [r.id for r in records]
        if len(ids) != len(set(ids)):
            raise PipelineError(f"domain {dc.name}: duplicate record ids across corpus files")
        kept, drops = corpus_mod.clean_verbose(records, policy)
        reasons: dict[str, int] = {}
        for _, reason in drops:
            reasons[reason] = reasons.get(reason, 0) + 1
        out = _corpus_path(config, dc.name)
        corpus_mod.write_corpus_jsonl(kept, out)
        outputs.append(out)
        stats[dc.name] = {**corpus_mod.corpus_stats(kept), "raw_sentences": len(records), "drops": reasons}
    stats_path = config.out_path / "corpus" / "stats.json"
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs.append(stats_path)
    logger.info(
        "\n%s",
        corpus_mod.format_stats_table(
            {name: {"sentences": s["sentences"], "words": s["words"]} for name, s in stats.items()}
        ),
    )
    return outputs, {"stats": stats}, "ok"


def _stage_roundtrip(config: RunConfig) -> tuple[list[Path], dict, str]:
    _, pipeline = build_gateway(config)
    outputs = []
    details: dict[str, dict] = {}
    for dc in config.domains:
        records = corpus_mod.read_corpus_jsonl(_corpus_path(config, dc.name))
        results = (
            pipeline.roundtrip_batch([r.text for r in records], config.default_pivot)
            if records
            else []
        )
        out = _rt_path(config, dc.name)
        out.parent.mkdir(parents=True, exist_ok=True)
        ok = failed = 0
        with out.open("w", encoding="utf-8", newline="\n") as fh:
            for rec, rt in zip(records, results):
                if isinstance(rt, RoundtripError):
                    failed += 1
                    row = {
                        "id": rec.id,
                        "ok": False,
                        "stage": rt.stage,
                        "error": rt.detail,
                    }
                else:
                    ok += 1
                    row = {
                        "id": rec.id,
                        "ok": True,
                        "neutral": rt.neutral,
                        "pivot_text": rt.pivot_text,
                        "pivot_lang": rt.pivot_lang,
                        "forward_backend": rt.forward_backend,
                        "backward_backend": rt.backward_backend,
                    }
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        outputs.append(out)
        details[dc.name] = {"ok": ok, "failed": failed}
    return outputs, details, "ok"


def _stage_build_dataset(config: RunConfig) -> tuple[list[Path], dict, str]:
    outputs = []
    details: dict[str, dict] = {}
    degraded = False
    for dc in config.domains:
        records = corpus_mod.read_corpus_jsonl(_corpus_path(config, dc.name))
        roundtrips: dict[str, object] = {}
        with _rt_path(config, dc.name).open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                if row["ok"]:
                    roundtrips[row["id"]] = RoundtripResult(
                        original="",
                        pivot_text=row["pivot_text"],
                        neutral=row["neutral"],
                        pivot_lang=row["pivot_lang"],
                        forward_backend=row.get("forward_backend", ""),
                        backward_backend=row.get("backward_backend", ""),
                    )
                else:
                    roundtrips[row["id"]] = RoundtripError(row["stage"], "", row["error"])
        result = db.pair_records(records, roundtrips)
        kept, dropped = db.filter_pairs_verbose(result.pairs)
        split_result = db.split(kept, records, dc.domain)
        pairs_out = _pairs_path(config, dc.name)
        db.write_pairs_jsonl(kept, pairs_out)
        split_out = _split_path(config, dc.name)
        db.write_split_json(split_result, split_out)
        outputs += [pairs_out, split_out]
        details[dc.name] = {
            "attempted": result.attempted,
            "paired": len(result.pairs),
            "filtered_out": len(dropped),
            "rt_failures": len(result.failures),
            "failure_rate": round(result.failure_rate, 4),
            "degraded": result.degraded,
            "train": len(split_result.train),
            "heldout_classifier": len(split_result.heldout_classifier),
            "test": len(split_result.test),
        }
        degraded = degraded or result.degraded
    report_path = config.out_path / "pairs" / "build-report.json"
    report_path.write_text(json.dumps(details, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs.append(report_path)
    return outputs, details, "degraded" if degraded else "ok"


def _stage_index(config: RunConfig) -> tuple[list[Path], dict, str]:
    outputs = []
    details = {}
    for dc in config.domains:
        train = _train_pairs(config, dc.name)
        if not train:
            raise PipelineError(f"domain {dc.name}: no training pairs to index")
        embedder = HashedTfidfEmbedder(dim=config.retrieval_dim)
        retriever = ExampleRetriever.build(train, embedder=embedder)
        out = _index_path(config, dc.name)
        retriever.save(out)
        outputs.append(out)
        details[dc.name] = {
            "entries": len(retriever.index),
            "dim": retriever.index.dim,
            "fingerprint": retriever.index.fingerprint,
        }
    return outputs, details, "ok"


def _stage_termbank(config: RunConfig) -> tuple[list[Path], dict, str]:
    outputs = []
    details = {}
    for dc in config.domains:
        out = _bank_path(config, dc.name)
        if not config.termbank_enabled or config.termbank_llm is None:
            termbank_mod.write_bank_jsonl([], out)
            details[dc.name] = {"terms": 0, "enabled": False}
            outputs.append(out)
            continue
        train = _train_pairs(config, dc.name)
        llm = GenClient(config.termbank_llm)
        bank = termbank_mod.build_bank(
            train,
            llm.complete,
            min_support=config.termbank_min_support,
            max_workers=config.workers,
        )
        termbank_mod.write_bank_jsonl(bank, out)
        outputs.append(out)
        details[dc.name] = {"terms": len(bank), "llm_calls": llm.calls, "enabled": True}
    return outputs, details, "ok"


def _stage_emit(config: RunConfig) -> tuple[list[Path], dict, str]:
    outputs = []
    details = {}
    for dc in config.domains:
        train = _train_pairs(config, dc.name)
        retriever = None
        if config.k > 0:
            retriever = ExampleRetriever.load(_index_path(config, dc.name), train)
        bank = termbank_mod.read_bank_jsonl(_bank_path(config, dc.name))
        spec = prompt_spec(config, dc.name)
        ft_dir = _ft_dir(config, dc.name)
        result = emitter_mod.emit_dataset(
            train,
            spec,
            ft_dir,
            retriever=retriever,
            bank=bank,
            shot_mode=config.train_shot_mode,
            seed=config.seed,
        )
        manifest = emitter_mod.emit_manifest(
            ft_dir / "manifest.json",
            base_model=config.base_model,
            dataset_path=f"ft/{dc.name}",
            seed=config.seed,
            dataset_checksum=result.checksum,
            shards=[p.name for p in result.shard_paths],
        )
        outputs += result.shard_paths + [ft_dir / "manifest.json"]
        details[dc.name] = {
            "records": result.count,
            "checksum": result.checksum,
            "shards": len(result.shard_paths),
            "lora_rank": manifest.lora_rank,
        }
    return outputs, details, "ok"


def make_engine(
    config: RunConfig,
    domain: str,
    queries_domain_pairs: Sequence[db.PseudoPair] | None = None,
) -> TransferEngine:
    """Assemble the transfer engine for one domain from persisted artifacts."""
    if config.generation is None:
        raise PipelineError("config defines no [generation] backend")
    train = list(queries_domain_pairs) if queries_domain_pairs is not None else _train_pairs(config, domain)
    retriever = None
    if config.k > 0:
        retriever = ExampleRetriever.load(_index_path(config, domain), train)
    bank = None
    bank_path = _bank_path(config, domain)
    if config.include_terms and bank_path.exists():
        bank = termbank_mod.read_bank_jsonl(bank_path)
    roundtripper = None
    if config.route == "rt_first":
        _, roundtripper = build_gateway(config)
    return TransferEngine(
        gen=GenClient(config.generation),
        spec=prompt_spec(config, domain),
        retriever=retriever,
        bank=bank,
        roundtripper=roundtripper,
        route=config.route,
        shot_mode=config.infer_shot_mode,
        pivot=config.default_pivot,
        seed=config.infer_seed,
        fail_hard=config.fail_hard,
    )


def serialize_transfer(result: TransferResult, query_id: str = "") -> dict:
    row = {
        "id": query_id,
        "input": result.input,
        "output": result.output,
        "route": result.route,
        "neutral_input": result.neutral_input,
        "sketch": result.sketch,
        "degraded": result.degraded,
        "error": result.error,
        "shot_ids_round1": list(result.shots_round1.ids) if result.shots_round1 else [],
        "shot_ids_round2": list(result.shots_round2.ids) if result.shots_round2 else [],
        "term_count": len(result.prompt_audit[0].term_matches) if result.prompt_audit else 0,
    }
    return row


def _stage_infer(config: RunConfig) -> tuple[list[Path], dict, str]:
    outputs = []
    details = {}
    for dc in config.domains:
        records = {r.id: r for r in corpus_mod.read_corpus_jsonl(_corpus_path(config, dc.name))}
        split = db.read_split_json(_split_path(config, dc.name))
        queries = [(rid, records[rid].text) for rid in split.test if rid in records]
        engine = make_engine(config, dc.name)
        results, summary = engine.batch_transfer([q for _, q in queries])
        out = _infer_path(config, dc.name)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", encoding="utf-8", newline="\n") as fh:
            for (rid, _), result in zip(queries, results):
                fh.write(
                    json.dumps(serialize_transfer(result, rid), ensure_ascii=False, sort_keys=True)
                    + "\n"
                )
        outputs.append(out)
        details[dc.name] = {
            "queries": summary.total,
            "ok": summary.ok,
            "failed": summary.failed,
            "degraded": summary.degraded,
            "generation_calls": engine.gen.calls,
        }
    return outputs, details, "ok"


def _stage_evaluate(config: RunConfig) -> tuple[list[Path], dict, str]:
    bleu_cfg = BleuConfig(case_sensitive=config.bleu_case_sensitive)
    fingerprint = config.fingerprint()
    rows: list[ReportRow] = []
    details = {}
    outputs = []
    heldout_texts: dict[str, list[str]] = {}
    for dc in config.domains:
        records = {r.id: r for r in corpus_mod.read_corpus_jsonl(_corpus_path(config, dc.name))}
        split = db.read_split_json(_split_path(config, dc.name))
        heldout_texts[dc.name] = [records[rid].text for rid in split.heldout_classifier if rid in records]

    for dc in config.domains:
        in_domain = heldout_texts[dc.name]
        out_domain = [
            text for name, texts in sorted(heldout_texts.items()) if name != dc.name for text in texts
        ]
        if config.negatives_include_neutral:
            train = _train_pairs(config, dc.name)
            out_domain += [p.neutral for p in train[: config.neutral_negative_cap]]
        if not in_domain or not out_domain:
            raise PipelineError(f"domain {dc.name}: empty classifier training class")
        clf, stats = train_classifier(
            in_domain,
            out_domain,
            seed=config.seed,
            dim=config.classifier_dim,
            domain=dc.name,
        )
        clf_path = config.out_path / "eval" / f"classifier-{dc.name}.bin"
        clf.save(clf_path)
        outputs.append(clf_path)

        inputs: list[str] = []
        neutral: list[str] = []
        generated: list[str] = []
        with _infer_path(config, dc.name).open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                if row.get("error") or not row.get("output"):
                    continue
                inputs.append(row["input"])
                generated.append(row["output"])
                if row.get("neutral_input"):
                    neutral.append(row["neutral_input"])
        if not generated:
            raise PipelineError(f"domain {dc.name}: no successful generations to evaluate")
        if neutral and len(neutral) == len(inputs):
            rows.append(
                ReportRow(
                    method=RT_BASELINE_METHOD,
                    domain=dc.name,
                    bleu=corpus_bleu(neutral, inputs, bleu_cfg),
                    acc=style_accuracy(neutral, clf),
                    n=len(neutral),
                    fingerprint=fingerprint,
                )
            )
        rows.append(
            ReportRow(
                method=method_label(config),
                domain=dc.name,
                bleu=corpus_bleu(generated, inputs, bleu_cfg),
                acc=style_accuracy(generated, clf),
                n=len(generated),
                fingerprint=fingerprint,
            )
        )
        details[dc.name] = {
            "classifier_val_acc": round(stats.validation_accuracy, 4),
            "classifier_epochs": stats.epochs,
            "scored": len(generated),
        }

    report = build_report(
        rows,
        metadata={
            "config_fingerprint": fingerprint,
            "bleu_fingerprint": bleu_cfg.fingerprint,
            "template": config.template,
            "k": config.k,
            "route": config.route,
            "shot_mode": config.infer_shot_mode,
            "classifier": {name: details[name]["classifier_val_acc"] for name in details},
        },
    )
    rows_path = config.out_path / "eval" / "rows.json"
    rows_path.write_text(report.to_json(), encoding="utf-8")
    outputs.append(rows_path)
    return outputs, details, "ok"


def _stage_report(config: RunConfig) -> tuple[list[Path], dict, str]:
    rows_path = config.out_path / "eval" / "rows.json"
    report = EvalReport.from_json(rows_path.read_text(encoding="utf-8"))
    report_dir = config.out_path / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    json_path = report_dir / "report.json"
    csv_path = report_dir / "report.csv"
    md_path = report_dir / "report.md"
    json_path.write_text(report.to_json(), encoding="utf-8")
    csv_path.write_text(report.to_csv(), encoding="utf-8")
    md_path.write_text(report.to_markdown(), encoding="utf-8")
    logger.info("\n%s", report.to_markdown())
    return [json_path, csv_path, md_path], {"rows": len(report.rows)}, "ok"


# ---------------------------------------------------------------------------
# stage inputs and dispatch

def _stage_inputs(stage: str, config: RunConfig) -> list[Path]:
    domains = [dc.name for dc in config.domains]
    if stage == "ingest":
        return [config.resolve(f) for dc in config.domains for f in dc.corpus_files]
    if stage == "roundtrip":
        return [_corpus_path(config, d) for d in domains]
    if stage == "build-dataset":
        return [_corpus_path(config, d) for d in domains] + [_rt_path(config, d) for d in domains]
    if stage == "index":
        return [_pairs_path(config, d) for d in domains] + [_split_path(config, d) for d in domains]
    if stage == "termbank":
        return [_pairs_path(config, d) for d in domains] + [_split_path(config, d) for d in domains]
    if stage == "emit-ft":
        paths = [_pairs_path(config, d) for d in domains] + [_split_path(config, d) for d in domains]
        paths += [_bank_path(config, d) for d in domains]
        if config.k > 0:
            paths += [_index_path(config, d) for d in domains]
        return paths
    if stage == "infer":
        paths = [_corpus_path(config, d) for d in domains] + [_split_path(config, d) for d in domains]
        paths += [_pairs_path(config, d) for d in domains]
        paths += [_bank_path(config, d) for d in domains]
        if config.k > 0:
            paths += [_index_path(config, d) for d in domains]
        return paths
    if stage == "evaluate":
        paths = [_corpus_path(config, d) for d in domains] + [_split_path(config, d) for d in domains]
        paths += [_pairs_path(config, d) for d in domains] + [_infer_path(config, d) for d in domains]
        return paths
    if stage == "report":
        return [config.out_path / "eval" / "rows.json"]
    raise PipelineError(f"unknown stage {stage!r}")


_STAGE_BODIES = {
    "ingest": _stage_ingest,
    "roundtrip": _stage_roundtrip,
    "build-dataset": _stage_build_dataset,
    "index": _stage_index,
    "termbank": _stage_termbank,
    "emit-ft": _stage_emit,
    "infer": _stage_infer,
    "evaluate": _stage_evaluate,
    "report": _stage_report,
}


def run_stage(stage: str, config: RunConfig, force: bool = False) -> StageResult:
    """Run one stage with manifest bookkeeping; returns its StageResult."""
    if stage not in _STAGE_BODIES:
        raise PipelineError(f"unknown stage {stage!r} (have {', '.join(STAGES)})")
    runner = StageRunner(config)
    config.out_path.mkdir(parents=True, exist_ok=True)
    return runner.run(stage, _stage_inputs(stage, config), lambda: _STAGE_BODIES[stage](config), force=force)


def run_all(config: RunConfig, force: bool = False) -> list[StageResult]:
    """Run every stage in order; stops at the first hard failure."""
    results = []
    for stage in STAGES:
        results.append(run_stage(stage, config, force=force))
    return results


def exit_code(results: Sequence[StageResult]) -> int:
    if any(r.failed for r in results):
        return 1
    if any(r.status == "degraded" for r in results):
        return 1
    return 0
