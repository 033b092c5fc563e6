"""Multi-task training: static mixing ratios, bandit scheduling and ablations.

Three task models (``main`` simplification, ``entail`` and ``para``
auxiliaries) are trained one mini-batch at a time.  Each step optimises the
active task's cross-entropy plus the soft-sharing penalty of the pairs that
involve it, clips the active task's gradients to a global norm and applies
Adam to the active task's parameters only.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from functools import reduce
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import bandit as bd
from .config import TrainConfig
from .corpus import BatchStream, Pair, Vocab, build_vocab, make_batches
from .model import ModelConfig, PointerGenerator, load_checkpoint, save_checkpoint
from .sharing import MAIN, TASKS, SharingPlan, build_plan, hard_tie, soft_penalty

log = logging.getLogger(__name__)

_TASK_SEED = {name: i for i, name in enumerate(TASKS)}


@dataclass
class TaskData:
    name: str
    train: list
    dev: list
    vocab: Vocab


@dataclass
class HistoryRow:
    step: int
    task: str
    loss: float
    penalty: float


class Adam:
    """Adam with per-tensor state and per-tensor step counts."""

    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.state: dict[int, list] = {}

    def step(self, params: Sequence[ad.Tensor], grads: Sequence[np.ndarray]) -> None:
        b1, b2 = self.betas
        for p, g in zip(params, grads):
            st = self.state.get(id(p))
            if st is None:
                st = self.state[id(p)] = [np.zeros_like(p.data), np.zeros_like(p.data), 0]
            st[0] = b1 * st[0] + (1 - b1) * g
            st[1] = b2 * st[1] + (1 - b2) * g * g
            st[2] += 1
            m_hat = st[0] / (1 - b1 ** st[2])
            v_hat = st[1] / (1 - b2 ** st[2])
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def selection_score(sari: float, bleu: float, fkgl: float) -> float:
    """Average of SARI, BLEU and 1/FKGL (FKGL floored at 0.1 before inverting)."""
    return (sari + bleu + 1.0 / max(fkgl, 0.1)) / 3.0


def ratio_from_trace(trace: Sequence[bd.TraceRecord], fraction: float = 0.1, num_arms: int = 3) -> tuple:
    """Integer mixing ratio from arm counts over the last ``ceil(fraction * rounds)`` rounds."""
    if not trace:
        raise ValueError("empty trace")
    tail = trace[-math.ceil(fraction * len(trace)) :]
    counts = [0] * num_arms
    for rec in tail:
        counts[rec.arm] += 1
    g = reduce(math.gcd, [c for c in counts if c])
    return tuple(c // g for c in counts)


def build_tasks(
    pairs: Mapping[str, tuple[list, list]], cap: int = 50000, shared_vocab: bool = False
) -> dict[str, TaskData]:
    """Wrap ``{task: (train_pairs, dev_pairs)}`` with vocabularies built on train data."""
    if shared_vocab:
        vocab = build_vocab((p.source + p.target for train, _ in pairs.values() for p in train), cap)
    out = {}
    for name, (train, dev) in pairs.items():
        v = vocab if shared_vocab else build_vocab((p.source + p.target for p in train), cap)
        out[name] = TaskData(name, list(train), list(dev), v)
    return out


class MultiTaskTrainer:
    """Owns the task models, their sharing plan, optimiser state and schedule."""

    def __init__(self, cfg: TrainConfig, tasks: Mapping[str, TaskData], plan: SharingPlan | None = None):
        if MAIN not in tasks:
            raise ValueError("a task named 'main' is required")
        self.cfg = cfg
        self.tasks = {n: tasks[n] for n in TASKS if n in tasks}
        self.models: dict[str, PointerGenerator] = {}
        for name, task in self.tasks.items():
            mc = ModelConfig(
                vocab_size=len(task.vocab),
                hidden_size=cfg.hidden_size,
                embedding_size=cfg.embedding_size,
                init_scale=cfg.init_scale,
            )
            rng = np.random.default_rng([cfg.seed, 100 + _TASK_SEED[name]])
            self.models[name] = PointerGenerator(mc, rng=rng, task=name)
        self.stores = {n: m.store for n, m in self.models.items()}
        self.plan = plan
        if plan is not None and plan.mode == "hard":
            hard_tie(plan, self.stores)
        lr = cfg.learning_rate
        if cfg.warm_start:
            self.load_weights(cfg.warm_start)
            lr *= 0.1
        self.optimizer = Adam(lr)
        self.streams = {
            n: BatchStream(t.train, t.vocab, cfg.batch_size, np.random.default_rng([cfg.seed, _TASK_SEED[n]]))
            for n, t in self.tasks.items()
        }
        self.schedule_rng = np.random.default_rng([cfg.seed, 7])
        self.step = 0
        self.cycle_pos = 0  # position in the static mixing cycle, kept across calls
        self.history: list[HistoryRow] = []
        self.bandit: bd.BanditState | None = None
        self._dev_batches = self._fixed_dev_batches()

    # plumbing ------------------------------------------------------------------

    @property
    def main(self) -> PointerGenerator:
        return self.models[MAIN]

    def task_parameters(self, task: str) -> list[ad.Tensor]:
        return self.stores[task].parameters()

    def unique_parameters(self) -> dict[str, ad.Tensor]:
        """``{"task/name": tensor}`` with aliased tensors listed once (first owner)."""
        seen, out = set(), {}
        for task, store in self.stores.items():
            for name, t in store.items():
                if id(t) not in seen:
                    seen.add(id(t))
                    out[f"{task}/{name}"] = t
        return out

    def _fixed_dev_batches(self):
        dev = self.tasks[MAIN].dev
        if not dev:
            return []
        rng = np.random.default_rng([self.cfg.seed, 999])
        n = min(self.cfg.eval_subset_size, len(dev))
        idx = np.sort(rng.choice(len(dev), size=n, replace=False))
        return make_batches([dev[i] for i in idx], self.tasks[MAIN].vocab, self.cfg.batch_size)

    # one optimisation step -------------------------------------------------------

    def train_step(self, task: str) -> HistoryRow:
        batch = next(self.streams[task])
        model = self.models[task]
        with ad.Tape() as tape:
            ce = model.sequence_loss(batch)
            penalty = soft_penalty(self.plan, self.stores, task) if self.plan is not None else ad.Tensor(0.0)
            loss = ad.add(ce, penalty)
        ad.backward(loss, tape)
        params = self.task_parameters(task)
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
        grads, _ = ad.clip_by_global_norm(grads, self.cfg.clip_norm)
        self.optimizer.step(params, grads)
        for store in self.stores.values():
            ad.zero_grad(store.parameters())
        self.step += 1
        row = HistoryRow(self.step, task, float(ce.data), float(penalty.data))
        self.history.append(row)
        return row

    def validation_loss(self, batches=None) -> float:
        """Sentence-weighted main-task loss on the fixed dev subset (no tape)."""
        batches = self._dev_batches if batches is None else batches
        if not batches:
            raise ValueError("main task has no dev data")
        total = count = 0.0
        for b in batches:
            total += float(self.main.sequence_loss(b).data) * len(b)
            count += len(b)
        return total / count

    def dev_loss(self, task: str = MAIN) -> float:
        t = self.tasks[task]
        batches = make_batches(t.dev, t.vocab, self.cfg.batch_size)
        total = sum(float(self.models[task].sequence_loss(b).data) * len(b) for b in batches)
        return total / sum(len(b) for b in batches)

    # schedules -------------------------------------------------------------------------

    def train_static(self, steps: int | None = None, ratio=None) -> list[HistoryRow]:
        """Block round-robin over ``ratio`` (main, entail, para) for ``steps`` batches."""
        steps = self.cfg.steps if steps is None else steps
        ratio = tuple(self.cfg.mixing_ratio if ratio is None else ratio)
        cycle = [t for t, r in zip(TASKS, ratio) for _ in range(r)]
        missing = {t for t in cycle if t not in self.tasks}
        if missing:
            raise ValueError(f"mixing ratio {ratio} needs data for {sorted(missing)}")
        if not cycle:
            raise ValueError("mixing ratio selects no task")
        for _ in range(steps):
            self.train_step(cycle[self.cycle_pos % len(cycle)])
            self.cycle_pos += 1
        return self.history

    def _arms(self) -> list[str]:
        return list(self.tasks)

    def train_dynamic(self, rounds: int | None = None) -> list[bd.TraceRecord]:
        """Bandit-scheduled training; one trace record per round."""
        rounds = self.cfg.rounds if rounds is None else rounds
        arms = self._arms()
        if self.bandit is None:
            self.bandit = bd.init(len(arms), self.cfg.bandit_q0, self.cfg.bandit_alpha, self.cfg.bandit_tau)
        for _ in range(rounds):
            probs = bd.policy(self.bandit)
            arm = bd.select(self.bandit, self.schedule_rng)
            for _ in range(self.cfg.n_s):
                self.train_step(arms[arm])
            reward = -self.validation_loss() / 2.0
            bd.observe(self.bandit, arm, reward)
            bd.trace(self.bandit, self.bandit.round, arm, reward, probs)
        return self.bandit.trace

    def train_random(self, rounds: int | None = None) -> list[bd.TraceRecord]:
        """Same loop as :meth:`train_dynamic` with uniformly drawn arms."""
        rounds = self.cfg.rounds if rounds is None else rounds
        arms = self._arms()
        if self.bandit is None:
            self.bandit = bd.init(len(arms), self.cfg.bandit_q0, self.cfg.bandit_alpha, self.cfg.bandit_tau)
        uniform = np.full(len(arms), 1.0 / len(arms))
        for _ in range(rounds):
            arm = int(self.schedule_rng.integers(len(arms)))
            self.bandit.round += 1
            self.bandit.pulls[arm] += 1
            for _ in range(self.cfg.n_s):
                self.train_step(arms[arm])
            reward = -self.validation_loss() / 2.0
            bd.trace(self.bandit, self.bandit.round, arm, reward, uniform)
        return self.bandit.trace

    def run(self):
        """Dispatch on ``cfg.schedule`` (``ratio_from_trace`` expects ``cfg.mixing_ratio`` set)."""
        s = self.cfg.schedule
        if s in ("static", "ratio_from_trace"):
            return self.train_static()
        if s == "dynamic":
            return self.train_dynamic()
        return self.train_random()

    # persistence -------------------------------------------------------------------

    def write_history(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "task", "loss", "penalty"])
            for r in self.history:
                w.writerow([r.step, r.task, repr(r.loss), repr(r.penalty)])

    def save(self, path) -> None:
        tensors = {}
        names = {}
        for key, t in self.unique_parameters().items():
            tensors["param/" + key] = t.data
            names[id(t)] = key
            st = self.optimizer.state.get(id(t))
            if st is not None:
                tensors["adam_m/" + key], tensors["adam_v/" + key] = st[0], st[1]
        aliases = {
            f"{task}/{name}": names[id(t)]
            for task, store in self.stores.items()
            for name, t in store.items()
            if names[id(t)] != f"{task}/{name}"
        }
        meta = {
            "kind": "multitask",
            "config": self.cfg.to_flat(),
            "step": self.step,
            "cycle_pos": self.cycle_pos,
            "adam_steps": {names[i]: st[2] for i, st in self.optimizer.state.items() if i in names},
            "lr": self.optimizer.lr,
            "aliases": aliases,
            "streams": {n: s.state() for n, s in self.streams.items()},
            "schedule_rng": self.schedule_rng.bit_generator.state,
            "model_configs": {n: asdict(m.config) for n, m in self.models.items()},
            "vocabs": {n: t.vocab.to_json() for n, t in self.tasks.items()},
        }
        if self.bandit is not None:
            meta["bandit"] = {
                "q": self.bandit.q.tolist(),
                "pulls": self.bandit.pulls.tolist(),
                "round": self.bandit.round,
                "last_arm": self.bandit.last_arm,
                "trace": [asdict(r) for r in self.bandit.trace],
            }
        save_checkpoint(path, tensors, meta)

    def load(self, path) -> None:
        """Restore parameters, optimiser, data streams and schedule state."""
        tensors, meta = load_checkpoint(path)
        self._load_params(tensors)
        self.optimizer.lr = meta["lr"]
        self.optimizer.state.clear()
        for key, t in self.unique_parameters().items():
            if "adam_m/" + key in tensors:
                self.optimizer.state[id(t)] = [
                    tensors["adam_m/" + key].copy(),
                    tensors["adam_v/" + key].copy(),
                    meta["adam_steps"][key],
                ]
        for n, state in meta["streams"].items():
            if n in self.streams:
                self.streams[n].restore(state)
        self.schedule_rng.bit_generator.state = meta["schedule_rng"]
        self.step = meta["step"]
        self.cycle_pos = meta.get("cycle_pos", 0)
        if "bandit" in meta:
            b = meta["bandit"]
            self.bandit = bd.init(len(b["q"]), self.cfg.bandit_q0, self.cfg.bandit_alpha, self.cfg.bandit_tau)
            self.bandit.q[:] = b["q"]
            self.bandit.pulls[:] = b["pulls"]
            self.bandit.round = b["round"]
            self.bandit.last_arm = b["last_arm"]
            self.bandit.trace = [
                bd.TraceRecord(r["round"], r["arm"], r["reward"], tuple(r["policy"])) for r in b["trace"]
            ]

    def _load_params(self, tensors: Mapping[str, np.ndarray]) -> None:
        for key, t in self.unique_parameters().items():
            arr = tensors.get("param/" + key)
            if arr is None:
                raise ValueError(f"checkpoint lacks {key}")
            if arr.shape != t.shape:
                raise ValueError(f"shape conflict for {key}: checkpoint {arr.shape} vs model {t.shape}")
            t.data[...] = arr

    def load_weights(self, path) -> None:
        """Initialise from a multi-task checkpoint or a single-model checkpoint (main task)."""
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") == "multitask":
            self._load_params(tensors)
        else:
            self.main.store.load_state_dict(tensors)

    def save_main_model(self, path) -> None:
        self.main.save(path, vocab=self.tasks[MAIN].vocab)


def _make_trainer(cfg: TrainConfig, tasks: Mapping[str, TaskData], use_plan: bool = True) -> MultiTaskTrainer:
    plan = None
    if use_plan and len(tasks) > 1:
        plan = build_plan(cfg.preset, cfg.lam)
    return MultiTaskTrainer(cfg, tasks, plan)


def train_static(cfg: TrainConfig, tasks: Mapping[str, TaskData], use_plan: bool = True) -> MultiTaskTrainer:
    trainer = _make_trainer(cfg, tasks, use_plan)
    trainer.train_static()
    return trainer


def train_dynamic(cfg: TrainConfig, tasks: Mapping[str, TaskData]) -> MultiTaskTrainer:
    trainer = _make_trainer(cfg, tasks)
    trainer.train_dynamic()
    return trainer


def random_curriculum(cfg: TrainConfig, tasks: Mapping[str, TaskData]) -> MultiTaskTrainer:
    trainer = _make_trainer(cfg, tasks)
    trainer.train_random()
    return trainer
