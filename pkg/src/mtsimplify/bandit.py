"""Boltzmann-exploration bandit over exponentially weighted action values.

Each round the controller samples an arm from ``softmax(q / tau)``; after the
chosen task has been trained the caller reports a reward and only that arm's
estimate moves: ``q[arm] <- (1 - alpha) * q[arm] + alpha * reward``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class BanditError(ValueError):
    pass


@dataclass
class TraceRecord:
    round: int
    arm: int
    reward: float
    policy: tuple


@dataclass
class BanditState:
    q: np.ndarray
    alpha: float = 0.3
    tau: float = 1.0
    q0: float = 0.0
    round: int = 0
    pulls: np.ndarray = None
    last_arm: int | None = None
    trace: list = field(default_factory=list)

    @property
    def num_arms(self) -> int:
        return len(self.q)


def init(m: int, q0: float = 0.0, alpha: float = 0.3, tau: float = 1.0) -> BanditState:
    if m < 2:
        raise BanditError(f"need at least 2 arms, got {m}")
    if not 0 < alpha <= 1:
        raise BanditError(f"alpha must lie in (0, 1], got {alpha}")
    if tau <= 0:
        raise BanditError(f"tau must be positive, got {tau}")
    return BanditState(
        q=np.full(m, float(q0)), alpha=alpha, tau=tau, q0=float(q0), pulls=np.zeros(m, dtype=np.int64)
    )


def policy(state: BanditState) -> np.ndarray:
    z = state.q / state.tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def select(state: BanditState, rng: np.random.Generator) -> int:
    p = policy(state)
    arm = int(rng.choice(len(p), p=p))
    state.pulls[arm] += 1
    state.round += 1
    state.last_arm = arm
    return arm


def observe(state: BanditState, arm: int, reward: float) -> BanditState:
    if not math.isfinite(reward):
        raise BanditError(f"non-finite reward {reward!r}")
    if state.last_arm is not None and arm != state.last_arm:
        raise BanditError(f"reward for arm {arm} but arm {state.last_arm} was selected")
    state.q[arm] = (1.0 - state.alpha) * state.q[arm] + state.alpha * reward
    return state


def trace(state: BanditState, round: int, selected: int, reward: float, probs=None) -> TraceRecord:
    """Append one record; ``probs`` defaults to the policy the arm was drawn from."""
    p = policy(state) if probs is None else np.asarray(probs, dtype=np.float64)
    rec = TraceRecord(int(round), int(selected), float(reward), tuple(float(x) for x in p))
    state.trace.append(rec)
    return rec


def closed_form(q0: float, alpha: float, rewards: Sequence[float]) -> float:
    """``(1-a)^n q0 + sum_k a (1-a)^(n-k) r_k`` for one arm's reward sequence."""
    n = len(rewards)
    value = (1 - alpha) ** n * q0
    for k, r in enumerate(rewards, start=1):
        value += alpha * (1 - alpha) ** (n - k) * r
    return value


def replay(records: Iterable[TraceRecord], m: int, q0: float, alpha: float) -> list[np.ndarray]:
    """Rebuild the q trajectory (value after each round) from a trace."""
    q = np.full(m, float(q0))
    out = []
    for rec in records:
        q[rec.arm] = (1 - alpha) * q[rec.arm] + alpha * rec.reward
        out.append(q.copy())
    return out


def write_trace_csv(records: Sequence[TraceRecord], path) -> None:
    m = len(records[0].policy) if records else 3
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "arm", "reward"] + [f"p_{i}" for i in range(m)])
        for r in records:
            w.writerow([r.round, r.arm, repr(r.reward)] + [repr(x) for x in r.policy])


def read_trace_csv(path) -> list[TraceRecord]:
    """Parse a trace file; raises :class:`BanditError` naming the bad row."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:3] != ["round", "arm", "reward"]:
        raise BanditError("row 1: missing header round,arm,reward,p_0,...")
    m = len(rows[0]) - 3
    out = []
    for n, row in enumerate(rows[1:], start=2):
        try:
            if len(row) != m + 3:
                raise ValueError(f"expected {m + 3} fields, got {len(row)}")
            arm = int(row[1])
            if not 0 <= arm < m:
                raise ValueError(f"arm {arm} out of range")
            out.append(TraceRecord(int(row[0]), arm, float(row[2]), tuple(float(x) for x in row[3:])))
        except ValueError as exc:
            raise BanditError(f"row {n}: {exc}") from None
    return out


def _trailing_mean(x: np.ndarray, window: int) -> np.ndarray:
    csum = np.cumsum(x, axis=0)
    out = np.empty_like(x)
    for t in range(len(x)):
        lo = t - window
        out[t] = (csum[t] - (csum[lo] if lo >= 0 else 0.0)) / (t - max(lo, -1))
    return out


def moving_average(records: Sequence[TraceRecord], window: int = 50) -> np.ndarray:
    """Trailing moving average of the logged policy vectors (rounds x arms)."""
    if not records:
        return np.zeros((0, 0))
    if window < 1:
        raise BanditError(f"window must be >= 1, got {window}")
    return _trailing_mean(np.array([r.policy for r in records], dtype=np.float64), window)


def selection_frequencies(records: Sequence[TraceRecord], window: int = 50) -> np.ndarray:
    """Trailing moving average of one-hot selection indicators (rounds x arms)."""
    if not records:
        return np.zeros((0, 0))
    if window < 1:
        raise BanditError(f"window must be >= 1, got {window}")
    m = len(records[0].policy)
    onehot = np.zeros((len(records), m))
    onehot[np.arange(len(records)), [r.arm for r in records]] = 1.0
    return _trailing_mean(onehot, window)
