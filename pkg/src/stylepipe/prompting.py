"""Prompt template rendering for finetuning records and inference calls.

Three templates are pinned as versioned assets. Template I states the
rewriting task, lists examples, then puts the query last; Template II puts
the query before the examples; Template III is a bare domain-to-domain
transfer scaffold. Zero-shot rendering drops the example sentences, and the
terminology guidance sentence is only present when term matches fired.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .dataset_builder import PseudoPair
from .retrieval import Shot, ShotSet
from .termbank import TermMatch

logger = logging.getLogger(__name__)


class Template(str, Enum):
    I = "I"
    II = "II"
    III = "III"


# Canonical template assets. Slot markers: [style name], [n], [query input],
# [example input i], [example output i], [terminology guidance]; "......"
# marks repetition of the example slot pair. Renders must differ from these
# assets only at slot positions (checked by the fidelity tests).
TEMPLATE_TEXTS: dict[Template, str] = {
    Template.I: (
        "Rewrite the given sentence into the style of [style name].\n"
        "Here are [n] examples:\n"
        "Input: [example input i]. Output: [example output i]. ......\n"
        "[terminology guidance]\n"
        "Now go ahead: Input: [query input]. The [style name] output:"
    ),
    Template.II: (
        "Rewrite the following sentence into the style of [style name]: "
        "Input: [query input]. "
        "Here are [n] examples: "
        "Input: [example input i]. Output: [example output i]. ...... "
        "[terminology guidance]"
    ),
    Template.III: (
        "[terminology guidance] "
        "General domain: [example input i]. [style name] domain: [example output i]. ...... "
        "general domain: Input: [query input]. [style name] domain:"
    ),
}

SHOT_ORDERS = ("similar_last", "similar_first")

_INJECTION_TOKEN = "[query input]"


def template_checksums() -> dict[str, str]:
    """SHA-256 of each template asset; pinned by the test suite."""
    return {
        t.value: hashlib.sha256(text.encode("utf-8")).hexdigest()
        for t, text in TEMPLATE_TEXTS.items()
    }


@dataclass(frozen=True)
class PromptSpec:
    """What to render: template, style name, shot count, terminology toggle."""

    style_name: str
    template: Template = Template.I
    k: int = 0
    include_terms: bool = False
    shot_order: str = "similar_last"

    def __post_init__(self) -> None:
        if not self.style_name.strip():
            raise ValueError("style_name must be nonempty")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.shot_order not in SHOT_ORDERS:
            raise ValueError(f"shot_order must be one of {SHOT_ORDERS}")


@dataclass(frozen=True)
class RenderedPrompt:
    prompt: str
    completion: str | None
    shot_ids: tuple[str, ...]
    term_matches: tuple[TermMatch, ...]
    template: Template


def _ordered(shots: Sequence[Shot], order: str) -> list[Shot]:
    # ShotSets arrive most-similar-first; similar_last puts the strongest
    # example adjacent to the query.
    return list(reversed(shots)) if order == "similar_last" else list(shots)


def _example_block(shots: Sequence[Shot], template: Template, style_name: str) -> str:
    if template is Template.III:
        return " ".join(
            f"General domain: {s.pair.neutral}. {style_name} domain: {s.pair.target}."
            for s in shots
        )
    return " ".join(f"Input: {s.pair.neutral}. Output: {s.pair.target}." for s in shots)


def render(
    query: str,
    spec: PromptSpec,
    shots: ShotSet | None = None,
    guidance: str | None = None,
    term_matches: Sequence[TermMatch] = (),
) -> RenderedPrompt:
    """Instantiate the template byte-exactly; pure function of its inputs.

    Shots fill the example slots (neutral side as input, styled side as
    output); k=0 removes the example sentences entirely, and a missing
    guidance removes the terminology sentence.
    """
    if not query.strip():
        raise ValueError("query must be nonempty")
    if _INJECTION_TOKEN in query:
        raise ValueError("query contains the literal template placeholder; rejected")
    if guidance is not None and not spec.include_terms:
        raise ValueError("guidance passed but spec.include_terms is false")
    shot_list = list(shots.shots) if shots is not None else []
    if len(shot_list) > spec.k:
        raise ValueError(f"got {len(shot_list)} shots for k={spec.k}")
    if len(shot_list) < spec.k:
        logger.debug("rendering with %d shots (requested %d)", len(shot_list), spec.k)
    ordered = _ordered(shot_list, spec.shot_order)
    n = len(ordered)
    style = spec.style_name

    if spec.template is Template.I:
        lines = [f"Rewrite the given sentence into the style of {style}."]
        if ordered:
            lines.append(f"Here are {n} examples:")
            lines.append(_example_block(ordered, spec.template, style))
        if guidance:
            lines.append(guidance)
        lines.append(f"Now go ahead: Input: {query}. The {style} output:")
        prompt = "\n".join(lines)
    elif spec.template is Template.II:
        parts = [f"Rewrite the following sentence into the style of {style}: Input: {query}."]
        if ordered:
            parts.append(f"Here are {n} examples: " + _example_block(ordered, spec.template, style))
        if guidance:
            parts.append(guidance)
        prompt = " ".join(parts)
    else:
        parts = []
        if guidance:
            parts.append(guidance)
        if ordered:
            parts.append(_example_block(ordered, spec.template, style))
        parts.append(f"general domain: Input: {query}. {style} domain:")
        prompt = " ".join(parts)

    if prompt.count(query) != 1:
        logger.debug("query text occurs %d times in prompt (textual coincidence)", prompt.count(query))
    return RenderedPrompt(
        prompt=prompt,
        completion=None,
        shot_ids=tuple(s.pair.id for s in ordered),
        term_matches=tuple(term_matches),
        template=spec.template,
    )


def render_training_record(
    pair: PseudoPair,
    spec: PromptSpec,
    shots: ShotSet | None = None,
    guidance: str | None = None,
    term_matches: Sequence[TermMatch] = (),
) -> RenderedPrompt:
    """Render a finetuning record: query is the neutral side, completion the target.

    Shots must not contain the pair itself (id identity); a completion that
    coincides textually with some example output is allowed but logged.
    """
    if shots is not None and pair.id in shots.ids:
        raise ValueError(f"training shots contain the pair itself ({pair.id})")
    rendered = render(pair.neutral, spec, shots=shots, guidance=guidance, term_matches=term_matches)
    if shots is not None and any(pair.target == s.pair.target for s in shots.shots):
        logger.debug("completion coincides with an example output for %s", pair.id)
    return RenderedPrompt(
        prompt=rendered.prompt,
        completion=pair.target,
        shot_ids=rendered.shot_ids,
        term_matches=rendered.term_matches,
        template=rendered.template,
    )
