"""Bundled synthetic two-style demo: corpora, mock backend tables, config.

Two styles built from disjoint term vocabularies over a shared neutral tier:
"fiscal" (revenue-office prose) and "saga" (chronicle prose). The mock MT
tables collapse styled and neutral terms onto pivot tokens going forward and
resolve them to the neutral tier coming back, so roundtripping genuinely
neutralizes style; the rulebook generator maps neutral terms back to styled
ones. The whole pipeline runs offline and deterministically under one seed.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from ._toml import dump_toml

SENTENCES_PER_DOMAIN = 250

# styled term -> neutral counterpart
FISCAL_TERMS = {
    "levy": "charge",
    "remittance": "payment",
    "taxpayer": "resident",
    "ledger": "notebook",
    "statute": "rule",
    "auditor": "reviewer",
    "exemption": "waiver",
    "bureau": "office",
    "disbursement": "payout",
    "withholding": "deduction",
    "comptroller": "manager",
    "arrears": "backlog",
}

SAGA_TERMS = {
    "knight": "soldier",
    "steed": "horse",
    "citadel": "fort",
    "quest": "journey",
    "sorcerer": "magician",
    "blade": "knife",
    "realm": "territory",
    "prophecy": "prediction",
    "maiden": "girl",
    "wyrm": "serpent",
    "minstrel": "singer",
    "chalice": "goblet",
}

# The tails past the last term are style-free, so roundtripped text keeps
# long shared n-gram runs and the no-transfer baseline lands at a plausible
# mid-range BLEU instead of zero.
FISCAL_TEMPLATES = (
    "The {a} must send the {b} to the {c} before the end of the month.",
    "Each {a} shall record the {b} under the {c} at the start of the review.",
    "A {a} may request the {b} from the {c} within ten business days.",
    "The {a} examines the {b} during the {c} as part of the annual check.",
    "No {a} can delay the {b} without the {c} and a written notice.",
    "The {a} holds the {b} after the {c} until the case is closed.",
    "Every {a} reports the {b} beside the {c} on the first page of the form.",
    "Some {a} accepts the {b} despite the {c} when the total is small.",
)

SAGA_TEMPLATES = (
    "The {a} rides beyond the {b} with the {c} at the break of dawn.",
    "A {a} guards the {b} beneath the {c} through the long cold night.",
    "The {a} seeks the {b} within the {c} at the edge of the world.",
    "Every {a} honors the {b} before the {c} in the light of the moon.",
    "No {a} forsakes the {b} inside the {c} while the old song is sung.",
    "The {a} carries the {b} toward the {c} over the hills and far away.",
    "Some {a} remembers the {b} behind the {c} from the days of old.",
    "Each {a} follows the {b} across the {c} until the stars fade out.",
)


def _pivot_tokens(terms: dict[str, str], prefix: str) -> dict[str, str]:
    # Stable pivot token per mapping; the digit marker keeps pivot tokens
    # out of the character-reversal space of plain words.
    return {styled: f"{prefix}{i:02d}" for i, styled in enumerate(sorted(terms), start=1)}


def _sentences(terms: dict[str, str], templates: tuple[str, ...], count: int, rng: random.Random) -> list[str]:
    styled = sorted(terms)
    combos = []
    for template in templates:
        for a in styled:
            for b in styled:
                for c in styled:
                    if len({a, b, c}) == 3:
                        combos.append((template, a, b, c))
    chosen = rng.sample(combos, count)
    return [template.format(a=a, b=b, c=c) for template, a, b, c in chosen]


def generate_demo(root: str | Path, seed: int = 7, sentences_per_domain: int = SENTENCES_PER_DOMAIN) -> Path:
    """Materialize the demo workspace; returns the config path."""
    root = Path(root)
    (root / "corpus").mkdir(parents=True, exist_ok=True)
    (root / "mocks").mkdir(parents=True, exist_ok=True)

    rng = random.Random(seed)
    for name, terms, templates in (
        ("fiscal", FISCAL_TERMS, FISCAL_TEMPLATES),
        ("saga", SAGA_TERMS, SAGA_TEMPLATES),
    ):
        sentences = _sentences(terms, templates, sentences_per_domain, rng)
        # Pack two sentences per line so ingestion exercises segmentation.
        lines = [
            " ".join(sentences[i : i + 2]) for i in range(0, len(sentences), 2)
        ]
        (root / "corpus" / f"{name}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    fiscal_pivot = _pivot_tokens(FISCAL_TERMS, "zif")
    saga_pivot = _pivot_tokens(SAGA_TERMS, "zis")
    forward: dict[str, str] = {}
    backward: dict[str, str] = {}
    rulebook: dict[str, str] = {}
    for terms, pivots in ((FISCAL_TERMS, fiscal_pivot), (SAGA_TERMS, saga_pivot)):
        for styled, neutral in terms.items():
            pivot = pivots[styled]
            forward[styled] = pivot
            forward[neutral] = pivot
            backward[pivot] = neutral
            rulebook[neutral] = styled

    for name, table in (
        ("mt_forward", forward),
        ("mt_backward", backward),
        ("rulebook", rulebook),
        ("lexicon", rulebook),
    ):
        (root / "mocks" / f"{name}.json").write_text(
            json.dumps(table, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    config = {
        "run": {"seed": seed, "workers": 2, "out_dir": "out"},
        "domains": [
            {
                "name": "fiscal",
                "description": "synthetic revenue-office style",
                "heldout_fraction": 0.3,
                "corpus": ["corpus/fiscal.txt"],
            },
            {
                "name": "saga",
                "description": "synthetic chronicle style",
                "heldout_fraction": 0.3,
                "corpus": ["corpus/saga.txt"],
            },
        ],
        "mt": {
            "default_pivot": "zh",
            "batch_size": 64,
            "max_in_flight": 2,
            "pivots": [
                {
                    "code": "zh",
                    "forward": {
                        "kind": "mock_scramble",
                        "seed": seed,
                        "model_tag": "demo-fwd-v1",
                        "mapping_file": "mocks/mt_forward.json",
                    },
                    "backward": {
                        "kind": "mock_scramble",
                        "seed": seed,
                        "inverse": True,
                        "model_tag": "demo-bwd-v1",
                        "mapping_file": "mocks/mt_backward.json",
                    },
                }
            ],
        },
        "generation": {
            "kind": "mock_rulebook",
            "model_tag": "demo-rulebook-v1",
            "mapping_file": "mocks/rulebook.json",
        },
        "termbank": {
            "enabled": True,
            "min_support": 2,
            "llm": {
                "kind": "mock_lexicon",
                "model_tag": "demo-lexicon-v1",
                "mapping_file": "mocks/lexicon.json",
            },
        },
        "prompt": {"template": "I", "k": 3, "include_terms": True},
        "retrieval": {"dim": 16384, "train_shot_mode": "similar"},
        "inference": {"route": "rt_first", "shot_mode": "similar", "seed": 11},
        "eval": {"negatives_include_neutral": True, "neutral_negative_cap": 120},
    }
    config_path = root / "demo.toml"
    config_path.write_text(dump_toml(config), encoding="utf-8")
    return config_path
