"""Inference orchestration: RT-first and direct routes, sketch-first shots.

Route "rt_first" roundtrip-translates the query before prompting so that
inference inputs live in the same neutralized domain the model was
finetuned on; route "direct" prompts on the raw query. With similarity
shots enabled, generation runs twice: round one uses random shots to
produce a sketch, round two retrieves shots similar to that sketch and
produces the final output.

Generation backends are pluggable. An HTTP completion backend speaks
POST {"model","prompt","max_tokens","temperature"} -> {"text"}; mock
backends (echo, rulebook substitution, lexicon lookup) keep every test and
the bundled demo fully offline. The mocks locate the query inside rendered
prompts via the template cues, which is a mock-only convenience.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import requests

from .mt_gateway import RoundtripError, RoundtripPipeline
from .prompting import PromptSpec, RenderedPrompt, render
from .retrieval import ExampleRetriever, ShotSet
from .termbank import TermPair, match_triggers, render_guidance
from . import termbank as _termbank

logger = logging.getLogger(__name__)

GEN_BACKEND_KINDS = ("http_completion", "mock_echo", "mock_rulebook", "mock_lexicon")

ROUTES = ("rt_first", "direct")


class GenerationError(RuntimeError):
    """A generation backend call failed or returned malformed data."""


@dataclass(frozen=True)
class GenBackendSpec:
    """Configuration of one generation backend."""

    backend_id: str
    kind: str
    endpoint: str = ""
    model_tag: str = ""
    api_key: str = ""
    max_new_tokens: int = 256
    temperature: float = 0.0
    mapping: Mapping[str, str] | None = None

    def __post_init__(self) -> None:
        if self.kind not in GEN_BACKEND_KINDS:
            raise ValueError(f"unknown generation backend kind {self.kind!r}")
        if self.kind == "http_completion" and not self.endpoint:
            raise ValueError("http_completion backend requires an endpoint")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.kind in ("mock_rulebook", "mock_lexicon") and self.mapping is None:
            raise ValueError(f"{self.kind} requires a mapping table")


_QUERY_CUES = (
    # Template I: "Now go ahead: Input: <q>. The <style> output:"
    re.compile(r"Now go ahead: Input: (.*)\. The .* output:$", re.DOTALL),
    # Template III: "general domain: Input: <q>. <style> domain:"
    re.compile(r"general domain: Input: (.*)\. .* domain:$", re.DOTALL),
    # Template II: "...into the style of <style>: Input: <q>. Here are ..." (or end)
    re.compile(
        r"Rewrite the following sentence into the style of [^:]*: Input: (.*?)\."
        r"(?: Here are | Note that |$)",
        re.DOTALL,
    ),
)


def extract_query_from_prompt(prompt: str) -> str:
    """Best-effort recovery of the query slot from a rendered prompt (mock use)."""
    for cue in _QUERY_CUES:
        m = cue.search(prompt)
        if m:
            return m.group(1)
    return prompt


_AFFIX_RE = re.compile(r"^(\W*)(.*?)(\W*)$", re.UNICODE | re.DOTALL)


def apply_token_mapping(text: str, mapping: Mapping[str, str]) -> str:
    """Token-wise substitution, case-insensitive on the punctuation-stripped core."""
    lowered = {k.lower(): v for k, v in mapping.items()}
    out = []
    for token in text.split():
        lead, core, trail = _AFFIX_RE.match(token).groups()
        out.append(f"{lead}{lowered.get(core.lower(), core)}{trail}")
    return " ".join(out)


class GenClient:
    """Front over a generation backend; counts every backend call."""

    def __init__(self, spec: GenBackendSpec, session: requests.Session | None = None, timeout: float = 60.0):
        self.spec = spec
        self.session = session
        self.timeout = timeout
        self.calls = 0
        if spec.kind == "http_completion" and session is None:
            self.session = requests.Session()

    def complete(self, prompt: str) -> str:
        self.calls += 1
        kind = self.spec.kind
        if kind == "mock_echo":
            return extract_query_from_prompt(prompt)
        if kind == "mock_rulebook":
            return apply_token_mapping(extract_query_from_prompt(prompt), self.spec.mapping or {})
        if kind == "mock_lexicon":
            return self._lexicon_complete(prompt)
        return self._http_complete(prompt)

    def _http_complete(self, prompt: str) -> str:
        headers = {}
        if self.spec.api_key:
            headers["Authorization"] = f"Bearer {self.spec.api_key}"
        resp = self.session.post(
            self.spec.endpoint,
            json={
                "model": self.spec.model_tag,
                "prompt": prompt,
                "max_tokens": self.spec.max_new_tokens,
                "temperature": self.spec.temperature,
            },
            headers=headers,
            timeout=self.timeout,
        )
        if resp.status_code != 200:
            raise GenerationError(f"backend {self.spec.backend_id}: HTTP {resp.status_code}")
        try:
            return str(resp.json()["text"])
        except (ValueError, KeyError) as exc:
            raise GenerationError(f"backend {self.spec.backend_id}: malformed response") from exc

    def _lexicon_complete(self, prompt: str) -> str:
        # Scripted answers for the two terminology-retrieval prompts: list
        # known source terms found in the sentence, or map a term to its
        # counterpart. Anything else gets an empty answer.
        lexicon = {k.lower(): v for k, v in (self.spec.mapping or {}).items()}
        extract_prefix = _termbank.EXTRACT_PROMPT.split("{sentence}")[0]
        align_prefix = _termbank.ALIGN_PROMPT.split("{word}")[0]
        if prompt.startswith(extract_prefix):
            m = re.search(r"Sentence: (.*)\. Terminologies and names:$", prompt, re.DOTALL)
            if not m:
                return ""
            sentence = m.group(1)
            found = []
            for source in lexicon:
                if re.search(r"(?<!\w)" + re.escape(source) + r"(?!\w)", sentence, re.IGNORECASE):
                    found.append(source)
            return ", ".join(sorted(found))
        if prompt.startswith(align_prefix):
            m = re.search(
                r"Find the counterpart of the word (.*?) in the following sentence.*"
                r"Sentence: (.*):$",
                prompt,
                re.DOTALL,
            )
            if not m:
                return ""
            return lexicon.get(m.group(1).strip().lower(), "")
        return ""


@dataclass(frozen=True)
class TransferResult:
    input: str
    output: str
    route: str
    neutral_input: str | None = None
    sketch: str | None = None
    shots_round1: ShotSet | None = None
    shots_round2: ShotSet | None = None
    prompt_audit: tuple[RenderedPrompt, ...] = ()
    degraded: bool = False
    error: str | None = None

    def __post_init__(self) -> None:
        if self.route not in ROUTES:
            raise ValueError(f"unknown route {self.route!r}")
        if self.route == "rt_first" and not self.degraded and self.error is None and self.neutral_input is None:
            raise ValueError("rt_first results must carry the neutralized input")


@dataclass
class BatchSummary:
    total: int = 0
    ok: int = 0
    failed: int = 0
    degraded: int = 0


def postprocess_output(raw: str, prompt: str) -> str:
    """Strip a leading prompt echo and truncate at the first blank line."""
    out = raw
    if out.startswith(prompt):
        out = out[len(prompt):]
    out = out.strip()
    return out.split("\n\n", 1)[0].strip()


class TransferEngine:
    """Runs single queries or batches through one configured transfer route."""

    def __init__(
        self,
        gen: GenClient,
        spec: PromptSpec,
        retriever: ExampleRetriever | None = None,
        bank: Sequence[TermPair] | None = None,
        roundtripper: RoundtripPipeline | None = None,
        route: str = "rt_first",
        shot_mode: str = "similar",
        pivot: str | None = None,
        seed: int = 0,
        fail_hard: bool = False,
    ):
        if route not in ROUTES:
            raise ValueError(f"route must be one of {ROUTES}")
        if route == "rt_first" and roundtripper is None:
            raise ValueError("rt_first route requires a roundtrip pipeline")
        if spec.k > 0 and retriever is None:
            raise ValueError("k > 0 requires a retriever")
        if shot_mode not in ("similar", "random"):
            raise ValueError("shot_mode must be 'similar' or 'random'")
        self.gen = gen
        self.spec = spec
        self.retriever = retriever
        self.bank = list(bank) if bank else []
        self.roundtripper = roundtripper
        self.route = route
        self.shot_mode = shot_mode
        self.pivot = pivot
        self.seed = seed
        self.fail_hard = fail_hard

    @property
    def sketch_first(self) -> bool:
        return self.spec.k > 0 and self.shot_mode == "similar"

    def transfer(self, query: str) -> TransferResult:
        """Transfer one query; audit carries every rendered prompt.

        Call accounting: rt_first with sketch-first retrieval issues exactly
        2 MT calls and 2 generation calls per uncached query; direct 0-shot
        issues exactly 1 generation call.
        """
        if not query.strip():
            raise ValueError("query must be nonempty")
        neutral_input: str | None = None
        degraded = False
        prompt_query = query
        if self.route == "rt_first":
            try:
                rt = self.roundtripper.roundtrip(query, self.pivot)
                neutral_input = rt.neutral
                prompt_query = rt.neutral
            except RoundtripError as exc:
                if self.fail_hard:
                    raise
                logger.warning("roundtrip failed, falling back to direct: %s", exc)
                degraded = True

        matches: Sequence = ()
        guidance = None
        if self.spec.include_terms and self.bank:
            matches = match_triggers(prompt_query, self.bank)
            guidance = render_guidance(matches)

        shots1: ShotSet | None = None
        shots2: ShotSet | None = None
        sketch: str | None = None
        prompts: list[RenderedPrompt] = []

        if self.spec.k == 0:
            rendered = render(prompt_query, self.spec, shots=None, guidance=guidance, term_matches=matches)
            prompts.append(rendered)
            output = postprocess_output(self.gen.complete(rendered.prompt), rendered.prompt)
        elif self.sketch_first:
            shots1 = self.retriever.retrieve_random_shots(self.seed, self.spec.k)
            round1 = render(prompt_query, self.spec, shots=shots1, guidance=guidance, term_matches=matches)
            prompts.append(round1)
            sketch = postprocess_output(self.gen.complete(round1.prompt), round1.prompt)
            if not sketch:
                logger.warning("empty sketch for query %r; reusing random shots", query[:50])
                shots2 = shots1
            else:
                shots2 = self.retriever.retrieve_sketch_shots(sketch, self.spec.k)
            round2 = render(prompt_query, self.spec, shots=shots2, guidance=guidance, term_matches=matches)
            prompts.append(round2)
            output = postprocess_output(self.gen.complete(round2.prompt), round2.prompt)
        else:
            shots1 = self.retriever.retrieve_random_shots(self.seed, self.spec.k)
            rendered = render(prompt_query, self.spec, shots=shots1, guidance=guidance, term_matches=matches)
            prompts.append(rendered)
            output = postprocess_output(self.gen.complete(rendered.prompt), rendered.prompt)

        return TransferResult(
            input=query,
            output=output,
            route=self.route,
            neutral_input=neutral_input,
            sketch=sketch,
            shots_round1=shots1,
            shots_round2=shots2,
            prompt_audit=tuple(prompts),
            degraded=degraded,
        )

    def batch_transfer(self, queries: Sequence[str]) -> tuple[list[TransferResult], BatchSummary]:
        """Order-preserving batch with per-item failure isolation."""
        results: list[TransferResult] = []
        summary = BatchSummary(total=len(queries))
        for query in queries:
            try:
                result = self.transfer(query)
            except Exception as exc:
                logger.error("transfer failed for %r: %s", query[:50], exc)
                results.append(
                    TransferResult(
                        input=query,
                        output="",
                        route=self.route,
                        degraded=True,
                        error=f"{type(exc).__name__}: {exc}",
                    )
                )
                summary.failed += 1
                continue
            results.append(result)
            summary.ok += 1
            if result.degraded:
                summary.degraded += 1
        return results, summary
