"""Terminology and name pair bank: two-round LLM extraction, trigger matching.

Round one asks a generation backend to list terminologies or character names
in the neutral side of a pair; round two asks for each term's counterpart in
the styled side. Both rounds validate the response against the actual
sentence text, so hallucinated terms never enter the bank. At prompt time,
bank source terms are matched against the query and rendered into a single
guidance sentence.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .dataset_builder import PseudoPair

logger = logging.getLogger(__name__)

LlmFn = Callable[[str], str]

EXTRACT_PROMPT = (
    "Identify terminologies or character names in the sentence and return in "
    "comma separated format, without any additional explanation. "
    "Sentence: {sentence}. Terminologies and names:"
)

ALIGN_PROMPT = (
    "Find the counterpart of the word {word} in the following sentence and "
    "return a single word, without any additional explanation. "
    "Sentence: {sentence}:"
)

MAX_TERMS_PER_SENTENCE = 8
MAX_MATCHES_PER_QUERY = 5
MAX_TARGET_TOKENS = 4
DEFAULT_MIN_SUPPORT = 2


@dataclass(frozen=True)
class TermPair:
    """Source-domain term mapped to the target-domain preferred term."""

    source_term: str
    target_term: str
    domain: str
    support: int = 1
    ambiguous: bool = False

    def __post_init__(self) -> None:
        if not self.source_term.strip() or not self.target_term.strip():
            raise ValueError("terms must be nonempty")
        if self.source_term != self.source_term.strip() or self.target_term != self.target_term.strip():
            raise ValueError("terms must be stripped")
        if self.source_term.lower() == self.target_term.lower():
            raise ValueError("identity term mappings are dropped")


@dataclass(frozen=True)
class TermMatch:
    """A whole-word occurrence of a bank source term; byte offsets into the query."""

    pair: TermPair
    start: int
    end: int


def _word_pattern(term: str) -> re.Pattern[str]:
    return re.compile(r"(?<!\w)" + re.escape(term) + r"(?!\w)", re.IGNORECASE)


def extract_terms(pair: PseudoPair, llm: LlmFn, max_terms: int = MAX_TERMS_PER_SENTENCE) -> list[str]:
    """First extraction round: comma-separated terms found in the neutral side.

    Terms the model invents (absent from the sentence, case-insensitive) are
    dropped; so are empties and duplicates. At most `max_terms` survive.
    """
    try:
        response = llm(EXTRACT_PROMPT.format(sentence=pair.neutral))
    except Exception as exc:
        logger.warning("term extraction call failed for %s: %s", pair.id, exc)
        return []
    if not isinstance(response, str):
        logger.warning("unparseable extraction response for %s", pair.id)
        return []
    haystack = pair.neutral.lower()
    terms: list[str] = []
    seen: set[str] = set()
    for raw in response.split(","):
        term = raw.strip()
        if not term or term.lower() in seen:
            continue
        if term.lower() not in haystack:
            logger.debug("hallucinated term %r dropped for %s", term, pair.id)
            continue
        seen.add(term.lower())
        terms.append(term)
        if len(terms) >= max_terms:
            break
    return terms


def align_term(term: str, pair: PseudoPair, llm: LlmFn) -> str | None:
    """Second round: the term's counterpart in the target side, or None.

    Accepts only a short response that actually occurs (case-insensitive) in
    the target text.
    """
    try:
        response = llm(ALIGN_PROMPT.format(word=term, sentence=pair.target))
    except Exception as exc:
        logger.warning("term alignment call failed for %r: %s", term, exc)
        return None
    candidate = response.strip() if isinstance(response, str) else ""
    if not candidate or len(candidate.split()) > MAX_TARGET_TOKENS:
        return None
    if candidate.lower() not in pair.target.lower():
        logger.debug("alignment %r not present in target, dropped", candidate)
        return None
    return candidate


def build_bank(
    pairs: Sequence[PseudoPair],
    llm: LlmFn,
    min_support: int = DEFAULT_MIN_SUPPORT,
    max_workers: int = 1,
) -> list[TermPair]:
    """Extract and align terms over the corpus, then merge into a bank.

    Identical (source, target) mappings accumulate support. When one source
    term aligns to several targets, the highest-support target wins; exact
    ties are all kept and marked ambiguous. Mappings with support below
    `min_support` and identity mappings are dropped. Output is sorted.
    """
    def _mappings_for(pair: PseudoPair) -> list[tuple[str, str]]:
        found = []
        for term in extract_terms(pair, llm):
            target = align_term(term, pair, llm)
            if target is not None and target.lower() != term.lower():
                found.append((term, target))
        return found

    if max_workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            per_pair = list(pool.map(_mappings_for, pairs))
    else:
        per_pair = [_mappings_for(p) for p in pairs]

    domain = pairs[0].domain if pairs else ""
    support: dict[tuple[str, str], int] = {}
    surface: dict[tuple[str, str], tuple[str, str]] = {}
    for mappings in per_pair:
        for source, target in mappings:
            key = (source.lower(), target.lower())
            support[key] = support.get(key, 0) + 1
            surface.setdefault(key, (source, target))

    by_source: dict[str, list[tuple[str, str]]] = {}
    for key in support:
        by_source.setdefault(key[0], []).append(key)

    bank: list[TermPair] = []
    for source_lower, keys in by_source.items():
        best = max(support[k] for k in keys)
        winners = [k for k in keys if support[k] == best]
        ambiguous = len(winners) > 1
        for key in winners:
            if support[key] < min_support:
                continue
            src, tgt = surface[key]
            bank.append(
                TermPair(
                    source_term=src,
                    target_term=tgt,
                    domain=domain,
                    support=support[key],
                    ambiguous=ambiguous,
                )
            )
    bank.sort(key=lambda tp: (tp.source_term.lower(), tp.target_term.lower()))
    return bank


def match_triggers(
    query: str,
    bank: Sequence[TermPair],
    max_matches: int = MAX_MATCHES_PER_QUERY,
) -> list[TermMatch]:
    """Whole-word, case-insensitive scan of bank source terms over the query.

    Overlaps resolve longest-match-first, then leftmost. Returns
    non-overlapping matches sorted by start, at most `max_matches`.
    """
    accepted: list[tuple[int, int, TermPair]] = []
    ordered = sorted(bank, key=lambda tp: (-len(tp.source_term), tp.source_term.lower(), tp.target_term.lower()))
    for pair in ordered:
        for m in _word_pattern(pair.source_term).finditer(query):
            if any(m.start() < e and s < m.end() for s, e, _ in accepted):
                continue
            accepted.append((m.start(), m.end(), pair))
    accepted.sort(key=lambda t: t[0])
    matches = []
    for start, end, pair in accepted[:max_matches]:
        byte_start = len(query[:start].encode("utf-8"))
        byte_end = byte_start + len(query[start:end].encode("utf-8"))
        matches.append(TermMatch(pair=pair, start=byte_start, end=byte_end))
    return matches


def render_guidance(matches: Sequence[TermMatch]) -> str | None:
    """One guidance sentence covering every matched mapping, or None.

    Pattern: Note that you may want to rewrite "X" to "Y" for contextual
    consistency. Repeated mappings are mentioned once, joined with "and".
    """
    if not matches:
        return None
    parts: list[str] = []
    seen: set[tuple[str, str]] = set()
    for match in matches:
        key = (match.pair.source_term, match.pair.target_term)
        if key in seen:
            continue
        seen.add(key)
        parts.append(f'"{match.pair.source_term}" to "{match.pair.target_term}"')
    return (
        "Note that you may want to rewrite "
        + " and ".join(parts)
        + " for contextual consistency."
    )


def write_bank_jsonl(bank: Iterable[TermPair], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for tp in bank:
            fh.write(
                json.dumps(
                    {
                        "source_term": tp.source_term,
                        "target_term": tp.target_term,
                        "domain": tp.domain,
                        "support": tp.support,
                        "ambiguous": tp.ambiguous,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def read_bank_jsonl(path: str | Path) -> list[TermPair]:
    bank = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            bank.append(
                TermPair(
                    source_term=row["source_term"],
                    target_term=row["target_term"],
                    domain=row["domain"],
                    support=row["support"],
                    ambiguous=row.get("ambiguous", False),
                )
            )
    return bank
