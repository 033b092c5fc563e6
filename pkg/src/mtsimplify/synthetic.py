"""Synthetic three-task suite for desk-scale experiments.

* ``main`` (delete-marked-tokens): every token preceded by the marker ``#`` is
  removed together with the marker.
* ``entail`` (subsequence generation): tokens from a fixed droppable set are
  removed, the rest kept in order.
* ``para`` (token-map substitution): tokens from a fixed subset are replaced
  through a fixed map, the rest copied.

All tasks draw sentences from the same word pool, so the copy skill is common
to all three.  Dev sentences of the main task may contain fresh rare words
that are only reachable through the copy mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Pair, make_pair

MARKER = "#"


@dataclass(frozen=True)
class SuiteSpec:
    num_words: int = 24
    min_len: int = 4
    max_len: int = 7
    main_train: int = 48
    main_dev: int = 64
    aux_train: int = 400
    aux_dev: int = 32
    rare_rate: float = 0.1


def _words(spec: SuiteSpec) -> list[str]:
    return [f"w{i}" for i in range(spec.num_words)]


def droppable(spec: SuiteSpec) -> set[str]:
    return {f"w{i}" for i in range(0, spec.num_words, 4)}


def substitution_map(spec: SuiteSpec) -> dict[str, str]:
    src = [f"w{i}" for i in range(1, spec.num_words, 4)]
    return {a: src[(k + 1) % len(src)] for k, a in enumerate(src)}


def _sentence(rng: np.random.Generator, spec: SuiteSpec, rare_prefix: str | None) -> list[str]:
    n = int(rng.integers(spec.min_len, spec.max_len + 1))
    words = _words(spec)
    out = [words[i] for i in rng.integers(0, len(words), size=n)]
    if rare_prefix is not None and rng.random() < spec.rare_rate * n:
        out[int(rng.integers(n))] = f"{rare_prefix}{int(rng.integers(10**6))}"
    return out


def delete_marked(rng: np.random.Generator, spec: SuiteSpec, rare_prefix: str | None = None) -> Pair:
    toks = _sentence(rng, spec, rare_prefix)
    k = int(rng.integers(1, min(2, len(toks) - 1) + 1))
    marked = set(rng.choice(len(toks), size=k, replace=False).tolist())
    source, target = [], []
    for i, t in enumerate(toks):
        if i in marked:
            source += [MARKER, t]
        else:
            source.append(t)
            target.append(t)
    return make_pair(source, target)


def subsequence(rng: np.random.Generator, spec: SuiteSpec) -> Pair:
    drop = droppable(spec)
    while True:
        toks = _sentence(rng, spec, None)
        kept = [t for t in toks if t not in drop]
        if kept and len(kept) < len(toks):
            return make_pair(toks, kept)


def substitute(rng: np.random.Generator, spec: SuiteSpec) -> Pair:
    table = substitution_map(spec)
    toks = _sentence(rng, spec, None)
    return make_pair(toks, [table.get(t, t) for t in toks])


def make_suite(seed: int = 0, spec: SuiteSpec = SuiteSpec()) -> dict[str, tuple[list[Pair], list[Pair]]]:
    """``{task: (train_pairs, dev_pairs)}`` for main, entail and para."""
    rng = np.random.default_rng([seed, 2024])
    main_train = [delete_marked(rng, spec, "r") for _ in range(spec.main_train)]
    main_dev = [delete_marked(rng, spec, "x") for _ in range(spec.main_dev)]
    ent = [subsequence(rng, spec) for _ in range(spec.aux_train + spec.aux_dev)]
    para = [substitute(rng, spec) for _ in range(spec.aux_train + spec.aux_dev)]
    return {
        "main": (main_train, main_dev),
        "entail": (ent[: spec.aux_train], ent[spec.aux_train :]),
        "para": (para[: spec.aux_train], para[spec.aux_train :]),
    }


def overfit_corpus(n: int = 16, seed: int = 0, spec: SuiteSpec = SuiteSpec()) -> list[Pair]:
    """Small main-task corpus used for the overfitting check."""
    rng = np.random.default_rng([seed, 16])
    return [delete_marked(rng, spec, "r") for _ in range(n)]
