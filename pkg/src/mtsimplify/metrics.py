"""Simplification metrics: SARI with sub-operation scores, FKGL, BLEU, ROUGE-L.

All functions take pre-tokenised input: either a list of tokens or a
whitespace-separated string.  Nothing here lowercases or re-tokenises.
"""

from __future__ import annotations

import math
import re
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np


class MetricError(ValueError):
    pass


def _toks(x) -> list[str]:
    return x.split() if isinstance(x, str) else list(x)


def ngrams(tokens: Sequence[str], n: int) -> list[tuple]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


# SARI ----------------------------------------------------------------------------


@dataclass
class SariReport:
    total: float
    f_add: float
    f_keep: float
    p_del: float
    per_order: list = field(default_factory=list)  # (f_add, f_keep, p_del) for n = 1..4


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p > 0 or r > 0 else 0.0


def _sari_ngram(src: list, out: list, refs: list[list]) -> tuple[float, float, float]:
    """Add F1, keep F1 and deletion precision for one n-gram order.

    Source and output counts are scaled by the number of references so that
    pooled reference counts act as fractional (count / #refs) memberships.
    """
    k = len(refs)
    r = Counter(g for ref in refs for g in ref)
    s = Counter({g: c * k for g, c in Counter(src).items()})
    o = Counter({g: c * k for g, c in Counter(out).items()})

    keep_sys = s & o
    keep_good = keep_sys & r
    keep_all = s & r
    keep_p = sum(keep_good[g] / keep_sys[g] for g in keep_good) / len(keep_sys) if keep_sys else 0.0
    keep_r = sum(keep_good[g] / keep_all[g] for g in keep_good) / len(keep_all) if keep_all else 0.0

    del_sys = s - o
    del_good = del_sys - r
    del_p = sum(del_good[g] / del_sys[g] for g in del_good) / len(del_sys) if del_sys else 0.0

    add_sys = set(o) - set(s)
    add_good = add_sys & set(r)
    add_all = set(r) - set(s)
    add_p = len(add_good) / len(add_sys) if add_sys else 0.0
    add_r = len(add_good) / len(add_all) if add_all else 0.0

    return _f1(add_p, add_r), _f1(keep_p, keep_r), del_p


def sari(source, output, references: Sequence) -> SariReport:
    """Sentence-level SARI on a 0-100 scale."""
    if not references:
        raise MetricError("SARI needs at least one reference")
    src, out = _toks(source), _toks(output)
    refs = [_toks(r) for r in references]
    per_order = []
    for n in range(1, 5):
        per_order.append(
            tuple(100.0 * v for v in _sari_ngram(ngrams(src, n), ngrams(out, n), [ngrams(r, n) for r in refs]))
        )
    f_add = float(np.mean([p[0] for p in per_order]))
    f_keep = float(np.mean([p[1] for p in per_order]))
    p_del = float(np.mean([p[2] for p in per_order]))
    return SariReport((f_add + f_keep + p_del) / 3, f_add, f_keep, p_del, per_order)


def corpus_sari(sources: Sequence, outputs: Sequence, reference_lists: Sequence[Sequence]) -> SariReport:
    """Mean of sentence-level SARI reports."""
    if not (len(sources) == len(outputs) == len(reference_lists)):
        raise MetricError(
            f"misaligned corpora: {len(sources)} sources, {len(outputs)} outputs, "
            f"{len(reference_lists)} reference sets"
        )
    if not sources:
        raise MetricError("empty corpus")
    reports = [sari(s, o, r) for s, o, r in zip(sources, outputs, reference_lists)]
    per_order = [tuple(float(np.mean([r.per_order[n][j] for r in reports])) for j in range(3)) for n in range(4)]
    f_add = float(np.mean([r.f_add for r in reports]))
    f_keep = float(np.mean([r.f_keep for r in reports]))
    p_del = float(np.mean([r.p_del for r in reports]))
    return SariReport((f_add + f_keep + p_del) / 3, f_add, f_keep, p_del, per_order)


# FKGL ----------------------------------------------------------------------------

_VOWEL_GROUP = re.compile(r"[aeiouy]+")
_WORD = re.compile(r"[a-z0-9]", re.IGNORECASE)


def syllables(word: str) -> int:
    """Vowel-group count, minus a silent final 'e' (kept for consonant+'le'), min 1."""
    w = word.lower()
    n = len(_VOWEL_GROUP.findall(w))
    if w.endswith("e") and not (w.endswith("le") and len(w) > 2 and w[-3] not in "aeiouy"):
        n -= 1
    return max(n, 1)


def is_word(token: str) -> bool:
    """Punctuation-only tokens are not counted as words."""
    return bool(_WORD.search(token))


def fkgl(sentences: Sequence) -> float:
    """``0.39 * words/sentences + 11.8 * syllables/words - 15.59``."""
    sents = [[t for t in _toks(s) if is_word(t)] for s in sentences]
    n_sent = len(sents)
    n_words = sum(len(s) for s in sents)
    if n_words == 0:
        raise MetricError("FKGL of a text with no words")
    n_syl = sum(syllables(w) for s in sents for w in s)
    return 0.39 * (n_words / n_sent) + 11.8 * (n_syl / n_words) - 15.59


# BLEU ----------------------------------------------------------------------------


def bleu(outputs: Sequence, reference_lists: Sequence[Sequence], max_n: int = 4) -> float:
    """Corpus BLEU-4 (no smoothing) on a 0-100 scale.

    Brevity penalty uses, per sentence, the reference length closest to the
    output length (shorter wins ties).
    """
    if len(outputs) != len(reference_lists):
        raise MetricError(f"misaligned corpora: {len(outputs)} outputs vs {len(reference_lists)} references")
    matches = [0] * max_n
    totals = [0] * max_n
    out_len = ref_len = 0
    for hyp, refs in zip(outputs, reference_lists):
        hyp = _toks(hyp)
        refs = [_toks(r) for r in refs]
        if not refs:
            raise MetricError("BLEU needs at least one reference per output")
        out_len += len(hyp)
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = Counter(ngrams(hyp, n))
            max_ref: Counter = Counter()
            for r in refs:
                max_ref |= Counter(ngrams(r, n))
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if out_len == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if out_len > ref_len else math.exp(1 - ref_len / out_len)
    return 100.0 * bp * math.exp(log_p)


# ROUGE-L ---------------------------------------------------------------------------


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> float:
    """LCS-based F1 (beta = 1) on a 0-100 scale."""
    c, r = _toks(candidate), _toks(reference)
    if not c or not r:
        warnings.warn("ROUGE-L of an empty sequence is 0", RuntimeWarning)
        return 0.0
    lcs = lcs_length(c, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(c), lcs / len(r)
    return 100.0 * 2 * p * rec / (p + rec)


# reports -----------------------------------------------------------------------------


@dataclass
class MatchReport:
    exact_match: float  # percent
    bleu: float
    rouge_l: float


def match_with_input(sources: Sequence, outputs: Sequence) -> MatchReport:
    """How close outputs stay to their sources (high = under-simplification)."""
    if len(sources) != len(outputs):
        raise MetricError(f"misaligned corpora: {len(sources)} sources vs {len(outputs)} outputs")
    if not sources:
        raise MetricError("empty corpus")
    srcs, outs = [_toks(s) for s in sources], [_toks(o) for o in outputs]
    exact = 100.0 * sum(s == o for s, o in zip(srcs, outs)) / len(srcs)
    return MatchReport(
        exact_match=exact,
        bleu=bleu(outs, [[s] for s in srcs]),
        rouge_l=float(np.mean([rouge_l(o, s) for o, s in zip(outs, srcs)])),
    )


@dataclass
class MetricReport:
    sari: SariReport
    bleu: float
    fkgl: float
    rouge_l: float
    exact_match: float  # fraction in [0, 1], against the source
    match: MatchReport | None = None

    def to_dict(self) -> dict:
        """Flat report with stable key names (see README)."""
        d = {
            "sari": self.sari.total,
            "sari.add": self.sari.f_add,
            "sari.keep": self.sari.f_keep,
            "sari.del": self.sari.p_del,
        }
        for n, (a, k, dl) in enumerate(self.sari.per_order, start=1):
            d[f"sari.{n}gram.add"], d[f"sari.{n}gram.keep"], d[f"sari.{n}gram.del"] = a, k, dl
        d["bleu"] = self.bleu
        d["fkgl"] = self.fkgl
        d["rouge_l"] = self.rouge_l
        d["exact_match"] = self.exact_match
        if self.match is not None:
            d["input.exact_match"] = self.match.exact_match
            d["input.bleu"] = self.match.bleu
            d["input.rouge_l"] = self.match.rouge_l
        return d


def evaluate(sources: Sequence, outputs: Sequence, reference_lists: Sequence[Sequence]) -> MetricReport:
    """Full metric suite; ROUGE-L here is the mean against the first reference."""
    s = corpus_sari(sources, outputs, reference_lists)
    outs = [_toks(o) for o in outputs]
    match = match_with_input(sources, outputs)
    return MetricReport(
        sari=s,
        bleu=bleu(outs, reference_lists),
        fkgl=fkgl(outs) if any(is_word(t) for o in outs for t in o) else 0.0,
        rouge_l=float(np.mean([rouge_l(o, refs[0]) for o, refs in zip(outs, reference_lists)])),
        exact_match=match.exact_match / 100.0,
        match=match,
    )


def sentence_rows(sources: Sequence, outputs: Sequence, reference_lists: Sequence[Sequence]) -> list[dict]:
    """Per-sentence scores for CSV export."""
    rows = []
    for i, (src, out, refs) in enumerate(zip(sources, outputs, reference_lists)):
        s = sari(src, out, refs)
        o = _toks(out)
        rows.append(
            {
                "index": i,
                "sari": s.total,
                "sari.add": s.f_add,
                "sari.keep": s.f_keep,
                "sari.del": s.p_del,
                "rouge_l": rouge_l(o, refs[0]) if o else 0.0,
                "input.rouge_l": rouge_l(o, src) if o else 0.0,
                "input.exact": int(o == _toks(src)),
            }
        )
    return rows
