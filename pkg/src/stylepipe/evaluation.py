"""BLEU, style classification accuracy, and report assembly.

BLEU here is the classic corpus-level metric: modified n-gram precisions for
n = 1..4 with uniform weights, geometric mean, exponential brevity penalty,
no smoothing at corpus level. Tokenization is a documented 13a-like scheme
(punctuation split from words, digit-adjacent periods/commas kept). The
variant is fingerprinted into every report.

Content preservation is scored between generations and their source texts;
a reference-mode call works the same way for synthetic fixtures with gold
targets. The style judge is a logistic classifier over hashed character
3-5-gram features (the retrieval embedder's feature family); an external
classifier can be plugged in over HTTP.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import requests

from .retrieval import hashed_ngram_counts

logger = logging.getLogger(__name__)

_CLF_MAGIC = b"SPCLF001"

SMOOTHING_KINDS = ("none", "add_k")


@dataclass(frozen=True)
class BleuConfig:
    max_order: int = 4
    case_sensitive: bool = True
    smoothing: str = "none"
    smoothing_k: int = 1

    def __post_init__(self) -> None:
        if self.max_order < 1:
            raise ValueError("max_order must be >= 1")
        if self.smoothing not in SMOOTHING_KINDS:
            raise ValueError(f"smoothing must be one of {SMOOTHING_KINDS}")

    @property
    def fingerprint(self) -> str:
        state = {
            "metric": "bleu-13a-like",
            "max_order": self.max_order,
            "case_sensitive": self.case_sensitive,
            "smoothing": self.smoothing,
            "smoothing_k": self.smoothing_k,
        }
        return hashlib.sha256(json.dumps(state, sort_keys=True).encode("utf-8")).hexdigest()[:12]


DEFAULT_BLEU = BleuConfig()
SENTENCE_BLEU = BleuConfig(smoothing="add_k")

# 13a-like tokenization: pad general punctuation, split periods/commas not
# adjacent to digits, split dashes after digits.
_PUNCT_RE = re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])")
_PERIOD_BEFORE_RE = re.compile(r"([^0-9])([\.,])")
_PERIOD_AFTER_RE = re.compile(r"([\.,])([^0-9])")
_DIGIT_DASH_RE = re.compile(r"([0-9])(-)")


def tokenize_13a(text: str, case_sensitive: bool = True) -> list[str]:
    s = text if case_sensitive else text.lower()
    s = s.replace("\n", " ").replace("\t", " ")
    s = _PUNCT_RE.sub(r" \1 ", s)
    s = _PERIOD_BEFORE_RE.sub(r"\1 \2 ", s)
    s = _PERIOD_AFTER_RE.sub(r" \1 \2", s)
    s = _DIGIT_DASH_RE.sub(r"\1 - ", s)
    return s.split()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _match_statistics(
    hypotheses: Sequence[str], references: Sequence[str], cfg: BleuConfig
) -> tuple[list[int], list[int], int, int]:
    """Clipped match and total n-gram counts plus lengths, summed as integers."""
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references must have equal length")
    if not hypotheses:
        raise ValueError("cannot score an empty corpus")
    matches = [0] * cfg.max_order
    totals = [0] * cfg.max_order
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_tokens = tokenize_13a(hyp, cfg.case_sensitive)
        ref_tokens = tokenize_13a(ref, cfg.case_sensitive)
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        for n in range(1, cfg.max_order + 1):
            hyp_counts = _ngrams(hyp_tokens, n)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(ref_tokens, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items()
            )
    return matches, totals, hyp_len, ref_len


def _brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if hyp_len == 0:
        return 0.0
    if hyp_len > ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def corpus_bleu(
    hypotheses: Sequence[str], references: Sequence[str], cfg: BleuConfig = DEFAULT_BLEU
) -> float:
    """Corpus-level BLEU in [0, 100]; zero if any populated order has no match.

    Orders for which the hypothesis corpus contains no n-grams at all are
    excluded from the geometric mean (effective-order convention), so an
    identity corpus scores exactly 100 regardless of segment length.
    """
    matches, totals, hyp_len, ref_len = _match_statistics(hypotheses, references, cfg)
    populated = [(m, t) for m, t in zip(matches, totals) if t > 0]
    if not populated or any(m == 0 for m, _ in populated):
        return 0.0
    log_sum = sum(math.log(m / t) for m, t in populated)
    score = _brevity_penalty(hyp_len, ref_len) * math.exp(log_sum / len(populated))
    return 100.0 * score


def sentence_bleu(hyp: str, ref: str, cfg: BleuConfig = SENTENCE_BLEU) -> float:
    """Single-segment BLEU with add-k smoothing on orders >= 2."""
    matches, totals, hyp_len, ref_len = _match_statistics([hyp], [ref], cfg)
    if totals[0] == 0 or matches[0] == 0:
        return 0.0
    k = cfg.smoothing_k if cfg.smoothing == "add_k" else 0
    log_terms = [math.log(matches[0] / totals[0])]
    for n in range(2, cfg.max_order + 1):
        m, t = matches[n - 1] + k, totals[n - 1] + k
        if t == 0 or m == 0:
            return 0.0
        log_terms.append(math.log(m / t))
    score = _brevity_penalty(hyp_len, ref_len) * math.exp(sum(log_terms) / cfg.max_order)
    return 100.0 * score


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))


def logistic_loss_and_grad(
    weights: np.ndarray,
    bias: float,
    features: np.ndarray,
    labels: np.ndarray,
    l2: float,
    sample_weight: np.ndarray | None = None,
) -> tuple[float, np.ndarray, float]:
    """(Weighted) mean cross-entropy with 0.5*l2*||w||^2; returns (loss, dW, db)."""
    z = features @ weights + bias
    sw = np.ones(len(labels)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    total = float(np.sum(sw))
    # log(1 + exp(z)) - y*z, computed stably
    loss = float(np.sum(sw * (np.logaddexp(0.0, z) - labels * z))) / total
    loss += 0.5 * l2 * float(weights @ weights)
    p = _sigmoid(z)
    residual = sw * (p - labels) / total
    grad_w = features.T @ residual + l2 * weights
    grad_b = float(np.sum(residual))
    return loss, grad_w, grad_b


def text_features(texts: Sequence[str], dim: int, ngram_min: int = 3, ngram_max: int = 5) -> np.ndarray:
    """L2-normalized hashed n-gram count matrix, one row per text."""
    X = np.zeros((len(texts), dim), dtype=np.float64)
    for i, text in enumerate(texts):
        for idx, c in hashed_ngram_counts(text, dim, ngram_min, ngram_max).items():
            X[i, idx] = float(c)
        norm = np.linalg.norm(X[i])
        if norm > 0:
            X[i] /= norm
    return X


@dataclass
class StyleClassifier:
    """Linear in-domain/out-of-domain judge over hashed character n-grams."""

    dim: int
    weights: np.ndarray
    bias: float
    domain: str = ""
    ngram_min: int = 3
    ngram_max: int = 5
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.weights)) or not math.isfinite(self.bias):
            raise ValueError("classifier weights must be finite")

    @property
    def fingerprint(self) -> str:
        state = {
            "kind": "builtin_linear",
            "dim": self.dim,
            "ngram_min": self.ngram_min,
            "ngram_max": self.ngram_max,
            "weights": hashlib.sha256(self.weights.tobytes()).hexdigest(),
            "bias": repr(self.bias),
        }
        return hashlib.sha256(json.dumps(state, sort_keys=True).encode("utf-8")).hexdigest()[:12]

    def predict(self, texts: Sequence[str]) -> list[int]:
        if not texts:
            return []
        X = text_features(texts, self.dim, self.ngram_min, self.ngram_max)
        p = _sigmoid(X @ self.weights + self.bias)
        return [int(v >= self.threshold) for v in p]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "dim": self.dim,
            "domain": self.domain,
            "ngram_min": self.ngram_min,
            "ngram_max": self.ngram_max,
            "threshold": self.threshold,
            "fingerprint": self.fingerprint,
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with path.open("wb") as fh:
            fh.write(_CLF_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<d", self.bias))
            fh.write(self.weights.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "StyleClassifier":
        path = Path(path)
        with path.open("rb") as fh:
            if fh.read(len(_CLF_MAGIC)) != _CLF_MAGIC:
                raise ValueError(f"{path}: not a stylepipe classifier file")
            (blob_len,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(blob_len).decode("utf-8"))
            (bias,) = struct.unpack("<d", fh.read(8))
            weights = np.frombuffer(fh.read(8 * header["dim"]), dtype="<f8").copy()
        clf = cls(
            dim=header["dim"],
            weights=weights,
            bias=bias,
            domain=header.get("domain", ""),
            ngram_min=header["ngram_min"],
            ngram_max=header["ngram_max"],
            threshold=header.get("threshold", 0.5),
        )
        if clf.fingerprint != header["fingerprint"]:
            raise ValueError(f"{path}: classifier fingerprint mismatch (corrupt file?)")
        return clf


class HttpClassifier:
    """Remote judge: POST {"texts": [...]} -> {"labels": [0|1, ...]}."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self.session = requests.Session()

    def predict(self, texts: Sequence[str]) -> list[int]:
        resp = self.session.post(self.endpoint, json={"texts": list(texts)}, timeout=self.timeout)
        if resp.status_code != 200:
            raise RuntimeError(f"classifier HTTP {resp.status_code}")
        labels = resp.json()["labels"]
        if len(labels) != len(texts):
            raise RuntimeError("classifier returned wrong label count")
        return [int(v) for v in labels]


@dataclass
class TrainStats:
    epochs: int
    final_loss: float
    train_accuracy: float
    validation_accuracy: float


def train_classifier(
    in_domain: Sequence[str],
    out_domain: Sequence[str],
    seed: int = 0,
    dim: int = 2**14,
    lr: float = 0.1,
    l2: float = 1e-4,
    max_epochs: int = 200,
    val_fraction: float = 0.2,
    domain: str = "",
    grad_tol: float = 1e-6,
    balanced: bool = True,
) -> tuple[StyleClassifier, TrainStats]:
    """Full-batch gradient descent on the logistic objective; deterministic.

    With `balanced` (default) samples are weighted inversely to class size,
    so the judge stays calibrated when negatives outnumber positives.
    """
    if not in_domain or not out_domain:
        raise ValueError("both classes must be nonempty")
    texts = list(in_domain) + list(out_domain)
    labels = np.array([1.0] * len(in_domain) + [0.0] * len(out_domain))
    order = list(range(len(texts)))
    random.Random(seed).shuffle(order)
    n_val = int(len(order) * val_fraction)
    val_idx, train_idx = order[:n_val], order[n_val:]
    if not train_idx:
        raise ValueError("not enough data to train after validation split")
    if not val_idx:
        val_idx = train_idx

    X = text_features(texts, dim)
    Xtr, ytr = X[train_idx], labels[train_idx]
    Xva, yva = X[val_idx], labels[val_idx]

    sample_weight = None
    if balanced:
        n_pos = float(np.sum(ytr == 1.0))
        n_neg = float(np.sum(ytr == 0.0))
        if n_pos == 0 or n_neg == 0:
            raise ValueError("training split lost one class; lower val_fraction or add data")
        n = len(ytr)
        sample_weight = np.where(ytr == 1.0, n / (2.0 * n_pos), n / (2.0 * n_neg))

    w = np.zeros(dim, dtype=np.float64)
    b = 0.0
    loss = math.inf
    epochs = 0
    for epoch in range(max_epochs):
        loss, gw, gb = logistic_loss_and_grad(w, b, Xtr, ytr, l2, sample_weight)
        epochs = epoch + 1
        if max(float(np.max(np.abs(gw))), abs(gb)) < grad_tol:
            break
        w -= lr * gw
        b -= lr * gb

    clf = StyleClassifier(dim=dim, weights=w, bias=b, domain=domain)
    train_acc = float(np.mean((_sigmoid(Xtr @ w + b) >= 0.5) == (ytr == 1.0)))
    val_acc = float(np.mean((_sigmoid(Xva @ w + b) >= 0.5) == (yva == 1.0)))
    stats = TrainStats(
        epochs=epochs, final_loss=loss, train_accuracy=train_acc, validation_accuracy=val_acc
    )
    logger.info(
        "classifier[%s]: %d epochs, loss %.5f, train acc %.3f, val acc %.3f",
        domain, epochs, loss, train_acc, val_acc,
    )
    return clf, stats


def style_accuracy(generations: Sequence[str], classifier) -> float:
    """Fraction of generations the judge labels in-domain."""
    if not generations:
        raise ValueError("no generations to score")
    labels = classifier.predict(list(generations))
    return sum(labels) / len(labels)


@dataclass(frozen=True)
class ReportRow:
    method: str
    domain: str
    bleu: float
    acc: float
    n: int
    fingerprint: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.bleu <= 100.0:
            raise ValueError(f"bleu out of range: {self.bleu}")
        if not 0.0 <= self.acc <= 1.0:
            raise ValueError(f"acc out of range: {self.acc}")


@dataclass
class EvalReport:
    rows: list[ReportRow]
    metadata: dict = field(default_factory=dict)

    def row(self, method: str, domain: str) -> ReportRow:
        for r in self.rows:
            if r.method == method and r.domain == domain:
                return r
        raise KeyError(f"no row for ({method!r}, {domain!r})")

    @property
    def methods(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    @property
    def domains(self) -> list[str]:
        return sorted({r.domain for r in self.rows})

    def to_json(self) -> str:
        payload = {
            "rows": [
                {
                    "method": r.method,
                    "domain": r.domain,
                    "bleu": round(r.bleu, 4),
                    "acc": round(r.acc, 4),
                    "n": r.n,
                    "fingerprint": r.fingerprint,
                }
                for r in self.rows
            ],
            "metadata": self.metadata,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        rows = [ReportRow(**row) for row in payload["rows"]]
        return cls(rows=rows, metadata=payload.get("metadata", {}))

    def to_csv(self) -> str:
        lines = ["method,domain,bleu,acc,n,fingerprint"]
        for r in self.rows:
            method = f'"{r.method}"' if "," in r.method else r.method
            lines.append(f"{method},{r.domain},{r.bleu:.4f},{r.acc:.4f},{r.n},{r.fingerprint}")
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        domains = self.domains
        header = ["Method"]
        for d in domains:
            header += [f"{d} BLEU", f"{d} Acc."]
        lines = [
            "| " + " | ".join(header) + " |",
            "|" + "|".join(["---"] * len(header)) + "|",
        ]
        for method in self.methods:
            cells = [method]
            for d in domains:
                try:
                    r = self.row(method, d)
                    cells += [f"{r.bleu:.2f}", f"{r.acc:.3f}"]
                except KeyError:
                    cells += ["-", "-"]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def build_report(rows: Iterable[ReportRow], metadata: dict | None = None) -> EvalReport:
    """Assemble rows (stably ordered by method, then domain) into a report."""
    ordered: list[ReportRow] = []
    methods_seen: list[str] = []
    rows = list(rows)
    for r in rows:
        if r.method not in methods_seen:
            methods_seen.append(r.method)
    for method in methods_seen:
        ordered.extend(sorted((r for r in rows if r.method == method), key=lambda r: r.domain))
    return EvalReport(rows=ordered, metadata=dict(metadata or {}))
