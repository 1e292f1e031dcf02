"""Run configuration: one TOML file drives every pipeline stage.

String values may interpolate environment variables with ${VAR}; relative
paths resolve against the config file's directory. The semantic fingerprint
hashes everything that affects outputs (seeds, backends, prompt spec,
retrieval and metric settings, mock mapping file contents) but no filesystem
paths, so identical runs in different directories fingerprint identically.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ._toml import TomlError, dump_toml, parse_toml
from .corpus import CleanPolicy, StyleDomain
from .inference import GenBackendSpec
from .mt_gateway import MtBackendSpec

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")

ENV_MT_URL = "STYLEPIPE_MT_URL"
ENV_LLM_URL = "STYLEPIPE_LLM_URL"
ENV_API_KEY = "STYLEPIPE_API_KEY"


class ConfigError(ValueError):
    pass


def _interpolate(value: Any) -> Any:
    if isinstance(value, str):
        def _sub(m: re.Match) -> str:
            name = m.group(1)
            if name not in os.environ:
                raise ConfigError(f"environment variable {name} is not set (needed by config)")
            return os.environ[name]

        return _ENV_RE.sub(_sub, value)
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class DomainConfig:
    domain: StyleDomain
    corpus_files: tuple[str, ...]

    @property
    def name(self) -> str:
        return self.domain.name


@dataclass(frozen=True)
class PivotConfig:
    code: str
    forward: MtBackendSpec
    backward: MtBackendSpec


@dataclass(frozen=True)
class RunConfig:
    config_dir: str
    raw: dict = field(compare=False, repr=False, default_factory=dict)

    seed: int = 7
    workers: int = 4
    out_dir: str = "out"
    log_level: str = "INFO"

    domains: tuple[DomainConfig, ...] = ()
    pivots: tuple[PivotConfig, ...] = ()
    default_pivot: str = "zh"
    mt_batch_size: int = 32
    mt_max_in_flight: int = 4

    generation: GenBackendSpec | None = None
    termbank_enabled: bool = True
    termbank_min_support: int = 2
    termbank_llm: GenBackendSpec | None = None

    template: str = "I"
    k: int = 5
    include_terms: bool = True
    shot_order: str = "similar_last"

    retrieval_dim: int = 2**14
    train_shot_mode: str = "similar"

    route: str = "rt_first"
    infer_shot_mode: str = "similar"
    infer_seed: int = 11
    fail_hard: bool = False

    bleu_case_sensitive: bool = True
    negatives_include_neutral: bool = True
    neutral_negative_cap: int = 200
    classifier_dim: int = 2**14

    base_model: str = "meta-llama/Llama-3.1-8B-Instruct"

    clean_min_tokens: int = 3
    clean_max_tokens: int = 150
    clean_min_alpha_ratio: float = 0.6

    def resolve(self, path_value: str) -> Path:
        p = Path(path_value)
        return p if p.is_absolute() else Path(self.config_dir) / p

    @property
    def out_path(self) -> Path:
        return self.resolve(self.out_dir)

    @property
    def clean_policy(self) -> CleanPolicy:
        return CleanPolicy(
            min_tokens=self.clean_min_tokens,
            max_tokens=self.clean_max_tokens,
            min_alpha_ratio=self.clean_min_alpha_ratio,
        )

    def domain_config(self, name: str) -> DomainConfig:
        for dc in self.domains:
            if dc.name == name:
                return dc
        raise ConfigError(f"unknown domain {name!r}")

    def to_dict(self) -> dict:
        """The config's canonical dict form; round-trips through TOML."""
        return json.loads(json.dumps(self.raw, sort_keys=True))

    def fingerprint(self) -> str:
        semantic = json.loads(json.dumps(self.raw, sort_keys=True))
        semantic.pop("run", None)
        run = dict(self.raw.get("run", {}))
        run.pop("out_dir", None)
        run.pop("log_level", None)
        semantic["run"] = run
        for dom in semantic.get("domains", []):
            files = dom.pop("corpus", [])
            dom["corpus_basenames"] = [Path(f).name for f in files]
        self._hash_mapping_files(semantic)
        return hashlib.sha256(
            json.dumps(semantic, sort_keys=True).encode("utf-8")
        ).hexdigest()[:16]

    def _hash_mapping_files(self, node: Any) -> None:
        if isinstance(node, dict):
            for key in list(node):
                if key.endswith("_file") and isinstance(node[key], str):
                    target = self.resolve(node[key])
                    digest = hashlib.sha256(target.read_bytes()).hexdigest() if target.exists() else "missing"
                    node[f"{key}_sha256"] = digest
                    node[key] = Path(node[key]).name
                else:
                    self._hash_mapping_files(node[key])
        elif isinstance(node, list):
            for item in node:
                self._hash_mapping_files(item)


def _load_mapping(config_dir: Path, section: dict) -> dict[str, str] | None:
    if "mapping_file" in section:
        path = Path(section["mapping_file"])
        if not path.is_absolute():
            path = config_dir / path
        return {str(k): str(v) for k, v in json.loads(path.read_text(encoding="utf-8")).items()}
    if "mapping" in section:
        return {str(k): str(v) for k, v in section["mapping"].items()}
    return None


def _mt_backend(config_dir: Path, backend_id: str, src: str, tgt: str, section: dict) -> MtBackendSpec:
    return MtBackendSpec(
        backend_id=backend_id,
        kind=section.get("kind", "mock_identity"),
        src_lang=src,
        tgt_lang=tgt,
        model_tag=section.get("model_tag", ""),
        endpoint=section.get("endpoint", ""),
        api_key=section.get("api_key", ""),
        seed=section.get("seed", 0),
        mapping=_load_mapping(config_dir, section),
        inverse=section.get("inverse", False),
    )


def _gen_backend(config_dir: Path, backend_id: str, section: dict) -> GenBackendSpec:
    return GenBackendSpec(
        backend_id=backend_id,
        kind=section.get("kind", "mock_echo"),
        endpoint=section.get("endpoint", ""),
        model_tag=section.get("model_tag", ""),
        api_key=section.get("api_key", ""),
        max_new_tokens=section.get("max_new_tokens", 256),
        temperature=section.get("temperature", 0.0),
        mapping=_load_mapping(config_dir, section),
    )


def load_config(path: str | Path) -> RunConfig:
    """Parse, interpolate, and validate a run config."""
    path = Path(path)
    try:
        raw = parse_toml(path.read_text(encoding="utf-8"))
    except TomlError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raw = _interpolate(raw)
    config_dir = path.resolve().parent
    return build_config(raw, config_dir)


def build_config(raw: dict, config_dir: Path) -> RunConfig:
    run = raw.get("run", {})

    domains = []
    for section in raw.get("domains", []):
        domain = StyleDomain(
            name=section.get("name", ""),
            description=section.get("description", ""),
            heldout_fraction=section.get("heldout_fraction", 0.2),
        )
        files = tuple(section.get("corpus", []))
        if not files:
            raise ConfigError(f"domain {domain.name!r} lists no corpus files")
        domains.append(DomainConfig(domain=domain, corpus_files=files))
    if not domains:
        raise ConfigError("config must define at least one [[domains]] entry")
    names = [d.name for d in domains]
    if len(names) != len(set(names)):
        raise ConfigError("domain names must be unique")

    mt = raw.get("mt", {})
    pivots = []
    for section in mt.get("pivots", []):
        code = section.get("code", "")
        if not code:
            raise ConfigError("pivot entry missing code")
        forward = _mt_backend(config_dir, f"mt-{code}-forward", "en", code, section.get("forward", {}))
        backward = _mt_backend(config_dir, f"mt-{code}-backward", code, "en", section.get("backward", {}))
        pivots.append(PivotConfig(code=code, forward=forward, backward=backward))
    if not pivots:
        raise ConfigError("config must define at least one [[mt.pivots]] entry")

    generation = None
    if "generation" in raw:
        generation = _gen_backend(config_dir, "generation", raw["generation"])

    tb = raw.get("termbank", {})
    termbank_llm = None
    if "llm" in tb:
        termbank_llm = _gen_backend(config_dir, "termbank-llm", tb["llm"])

    prompt = raw.get("prompt", {})
    retrieval = raw.get("retrieval", {})
    inference = raw.get("inference", {})
    evaluation = raw.get("eval", {})
    emit = raw.get("emit", {})
    clean = raw.get("clean", {})

    config = RunConfig(
        config_dir=str(config_dir),
        raw=raw,
        seed=run.get("seed", 7),
        workers=run.get("workers", 4),
        out_dir=run.get("out_dir", "out"),
        log_level=run.get("log_level", "INFO"),
        domains=tuple(domains),
        pivots=tuple(pivots),
        default_pivot=mt.get("default_pivot", pivots[0].code),
        mt_batch_size=mt.get("batch_size", 32),
        mt_max_in_flight=mt.get("max_in_flight", 4),
        generation=generation,
        termbank_enabled=tb.get("enabled", True),
        termbank_min_support=tb.get("min_support", 2),
        termbank_llm=termbank_llm,
        template=prompt.get("template", "I"),
        k=prompt.get("k", 5),
        include_terms=prompt.get("include_terms", True),
        shot_order=prompt.get("shot_order", "similar_last"),
        retrieval_dim=retrieval.get("dim", 2**14),
        train_shot_mode=retrieval.get("train_shot_mode", "similar"),
        route=inference.get("route", "rt_first"),
        infer_shot_mode=inference.get("shot_mode", "similar"),
        infer_seed=inference.get("seed", 11),
        fail_hard=inference.get("fail_hard", False),
        bleu_case_sensitive=evaluation.get("case_sensitive", True),
        negatives_include_neutral=evaluation.get("negatives_include_neutral", True),
        neutral_negative_cap=evaluation.get("neutral_negative_cap", 200),
        classifier_dim=evaluation.get("classifier_dim", 2**14),
        base_model=emit.get("base_model", "meta-llama/Llama-3.1-8B-Instruct"),
        clean_min_tokens=clean.get("min_tokens", 3),
        clean_max_tokens=clean.get("max_tokens", 150),
        clean_min_alpha_ratio=clean.get("min_alpha_ratio", 0.6),
    )
    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    if config.default_pivot not in {p.code for p in config.pivots}:
        raise ConfigError(f"default_pivot {config.default_pivot!r} is not a configured pivot")
    if config.template not in ("I", "II", "III"):
        raise ConfigError(f"template must be I, II or III, got {config.template!r}")
    if config.route not in ("rt_first", "direct"):
        raise ConfigError(f"route must be rt_first or direct, got {config.route!r}")
    if config.k < 0:
        raise ConfigError("prompt.k must be >= 0")
    if config.train_shot_mode not in ("similar", "random"):
        raise ConfigError("retrieval.train_shot_mode must be similar or random")
    if config.infer_shot_mode not in ("similar", "random"):
        raise ConfigError("inference.shot_mode must be similar or random")


def serialize_config(config: RunConfig) -> str:
    return dump_toml(config.to_dict())


# Where each overridable field lives in the raw TOML structure.
_RAW_SLOTS = {
    "seed": ("run", "seed"),
    "workers": ("run", "workers"),
    "route": ("inference", "route"),
    "infer_shot_mode": ("inference", "shot_mode"),
    "infer_seed": ("inference", "seed"),
    "k": ("prompt", "k"),
    "include_terms": ("prompt", "include_terms"),
    "template": ("prompt", "template"),
}


def with_overrides(config: RunConfig, **updates: Any) -> RunConfig:
    """Return a config with fields overridden, keeping raw (and so the
    fingerprint) in sync."""
    import dataclasses

    unknown = set(updates) - set(_RAW_SLOTS)
    if unknown:
        raise ConfigError(f"cannot override: {sorted(unknown)}")
    raw = json.loads(json.dumps(config.raw))
    for name, value in updates.items():
        section, key = _RAW_SLOTS[name]
        raw.setdefault(section, {})[key] = value
    return dataclasses.replace(config, raw=raw, **updates)
