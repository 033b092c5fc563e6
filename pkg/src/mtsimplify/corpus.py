"""Parallel corpus loading, capped vocabularies and padded copy-aware batches."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD, UNK, BOS, EOS = 0, 1, 2, 3
PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)


class CorpusError(ValueError):
    """Malformed or misaligned corpus files."""


@dataclass(frozen=True)
class Pair:
    source: tuple
    target: tuple  # includes BOS/EOS markers

    @property
    def target_words(self) -> tuple:
        return tuple(t for t in self.target if t not in (BOS_TOKEN, EOS_TOKEN))


def make_pair(source: Sequence[str] | str, target: Sequence[str] | str) -> Pair:
    src = tuple(source.split()) if isinstance(source, str) else tuple(source)
    tgt = tuple(target.split()) if isinstance(target, str) else tuple(target)
    return Pair(src, (BOS_TOKEN, *tgt, EOS_TOKEN))


class Vocab:
    """Bidirectional token/id map with fixed specials at ids 0-3."""

    def __init__(self, tokens: Sequence[str], counts: Sequence[int] | None = None):
        self.itos = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")
        counts = list(counts) if counts is not None else [0] * len(tokens)
        self.counts = [0] * len(SPECIALS) + counts[: len(self.itos) - len(SPECIALS)]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def token(self, idx: int, oovs: Sequence[str] = ()) -> str:
        if idx < len(self.itos):
            return self.itos[idx]
        return oovs[idx - len(self.itos)]

    def decode(self, ids: Iterable[int], oovs: Sequence[str] = ()) -> list[str]:
        return [self.token(int(i), oovs) for i in ids]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok, n in zip(self.itos, self.counts):
                fh.write(f"{tok}\t{n}\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        tokens, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                tok, n = line.rstrip("\n").split("\t")
                tokens.append(tok)
                counts.append(int(n))
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise CorpusError(f"{path}: vocabulary must start with {SPECIALS}")
        return cls(tokens[len(SPECIALS) :], counts[len(SPECIALS) :])

    def to_json(self) -> dict:
        return {"tokens": self.itos[len(SPECIALS) :], "counts": self.counts[len(SPECIALS) :]}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocab":
        return cls(obj["tokens"], obj["counts"])


def build_vocab(streams: Iterable[Iterable[str]], cap: int = 50000) -> Vocab:
    """Top-``cap`` tokens by frequency, ties broken lexicographically."""
    counter: Counter = Counter()
    for stream in streams:
        counter.update(t for t in stream if t not in SPECIALS)
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
    return Vocab([t for t, _ in ranked], [n for _, n in ranked])


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def load_pairs(source_path, target_path) -> list[Pair]:
    """Line-aligned pairs from two whitespace-tokenised files."""
    src_lines, tgt_lines = _read_lines(source_path), _read_lines(target_path)
    if len(src_lines) != len(tgt_lines):
        raise CorpusError(
            f"line count mismatch: {os.fspath(source_path)} has {len(src_lines)} lines, "
            f"{os.fspath(target_path)} has {len(tgt_lines)}"
        )
    pairs = []
    for n, (s, t) in enumerate(zip(src_lines, tgt_lines), start=1):
        if not s.split() or not t.split():
            which = source_path if not s.split() else target_path
            raise CorpusError(f"{os.fspath(which)}:{n}: empty line")
        pairs.append(make_pair(s, t))
    return pairs


def write_pairs(pairs: Sequence[Pair], source_path, target_path) -> None:
    """Inverse of :func:`load_pairs`; every line ends with a newline."""
    with open(source_path, "w", encoding="utf-8") as fs, open(target_path, "w", encoding="utf-8") as ft:
        for p in pairs:
            fs.write(" ".join(p.source) + "\n")
            ft.write(" ".join(p.target_words) + "\n")


@dataclass
class SentenceBatch:
    src_ids: np.ndarray  # B x S, OOV -> UNK
    src_ext: np.ndarray  # B x S, OOV -> V + k
    src_mask: np.ndarray  # B x S
    oovs: list  # per element source OOV tokens in first-seen order
    tgt_ids: np.ndarray  # B x T, extended ids incl. BOS/EOS
    tgt_mask: np.ndarray  # B x T
    vocab_size: int

    @property
    def n_ext(self) -> int:
        return max((len(o) for o in self.oovs), default=0)

    def __len__(self) -> int:
        return self.src_ids.shape[0]


def source_extended(tokens: Sequence[str], vocab: Vocab) -> tuple[list[int], list[int], list[str]]:
    """``(ids, extended_ids, oovs)`` for one source sentence."""
    ids, ext, oovs = [], [], []
    for tok in tokens:
        i = vocab.id(tok)
        ids.append(i)
        if i == UNK and tok != UNK_TOKEN:
            if tok not in oovs:
                oovs.append(tok)
            ext.append(len(vocab) + oovs.index(tok))
        else:
            ext.append(i)
    return ids, ext, oovs


def target_extended(tokens: Sequence[str], vocab: Vocab, oovs: Sequence[str]) -> list[int]:
    out = []
    for tok in tokens:
        i = vocab.id(tok)
        if i == UNK and tok in oovs:
            i = len(vocab) + list(oovs).index(tok)
        out.append(i)
    return out


def collate(pairs: Sequence[Pair], vocab: Vocab) -> SentenceBatch:
    B = len(pairs)
    S = max(len(p.source) for p in pairs)
    T = max(len(p.target) for p in pairs)
    src_ids = np.full((B, S), PAD, dtype=np.int64)
    src_ext = np.full((B, S), PAD, dtype=np.int64)
    src_mask = np.zeros((B, S))
    tgt_ids = np.full((B, T), PAD, dtype=np.int64)
    tgt_mask = np.zeros((B, T))
    oov_lists = []
    for b, p in enumerate(pairs):
        ids, ext, oovs = source_extended(p.source, vocab)
        n = len(ids)
        src_ids[b, :n], src_ext[b, :n], src_mask[b, :n] = ids, ext, 1.0
        tgt = target_extended(p.target, vocab, oovs)
        tgt_ids[b, : len(tgt)], tgt_mask[b, : len(tgt)] = tgt, 1.0
        oov_lists.append(oovs)
    return SentenceBatch(src_ids, src_ext, src_mask, oov_lists, tgt_ids, tgt_mask, len(vocab))


def make_batches(
    pairs: Sequence[Pair], vocab: Vocab, batch_size: int, rng: np.random.Generator | None = None
) -> list[SentenceBatch]:
    """One epoch of length-bucketed batches.

    With ``rng`` the pairs are shuffled before a stable sort by source length
    (so equal-length pairs land in random order) and the batch order is then
    shuffled; without it the order is deterministic.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(pairs))
    if rng is not None:
        order = rng.permutation(len(pairs))
    order = sorted(order, key=lambda i: len(pairs[i].source))
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    return [collate([pairs[i] for i in chunk], vocab) for chunk in chunks]


class BatchStream:
    """Endless batch iterator that reshuffles (seeded) at each epoch boundary."""

    def __init__(self, pairs: Sequence[Pair], vocab: Vocab, batch_size: int, rng: np.random.Generator):
        if not pairs:
            raise CorpusError("cannot stream batches from an empty corpus")
        self.pairs, self.vocab, self.batch_size, self.rng = pairs, vocab, batch_size, rng
        self.epoch = 0
        self._batches: list[SentenceBatch] = []
        self._pos = 0
        self._rng_before_epoch = rng.bit_generator.state

    def __iter__(self) -> Iterator[SentenceBatch]:
        return self

    def __next__(self) -> SentenceBatch:
        if self._pos >= len(self._batches):
            self._rng_before_epoch = self.rng.bit_generator.state
            self._batches = make_batches(self.pairs, self.vocab, self.batch_size, self.rng)
            self._pos = 0
            self.epoch += 1
        batch = self._batches[self._pos]
        self._pos += 1
        return batch

    def state(self) -> dict:
        return {
            "rng": self.rng.bit_generator.state,
            "rng_before_epoch": self._rng_before_epoch,
            "epoch": self.epoch,
            "pos": self._pos,
        }

    def restore(self, state: dict) -> None:
        # regenerate the current epoch from the rng state that produced it
        self.rng.bit_generator.state = state["rng_before_epoch"]
        self._rng_before_epoch = state["rng_before_epoch"]
        self._batches = []
        if state["epoch"] > 0:
            self._batches = make_batches(self.pairs, self.vocab, self.batch_size, self.rng)
        self.rng.bit_generator.state = state["rng"]
        self.epoch, self._pos = state["epoch"], state["pos"]
