"""Layer groups, per-task parameter stores and multi-level sharing plans.

A sharing plan pairs the main task with each auxiliary task and names the
layer groups the pair shares.  In soft mode the pair is coupled through a
penalty ``lam * ||theta_s - phi_s||`` added to the active task's loss; in hard
mode the paired tensors become one object.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from .autodiff import Tensor, add, mul, sqrt_safe, sub, sum_

MAIN, ENTAIL, PARA = "main", "entail", "para"
TASKS = (MAIN, ENTAIL, PARA)


class ConfigurationError(ValueError):
    """Invalid sharing configuration (unknown preset, shape conflicts, ...)."""


class LayerGroup(str, enum.Enum):
    EMBEDDING = "Embedding"
    ENC_L1 = "EncL1"
    ENC_L2 = "EncL2"
    ATTENTION = "Attention"
    DEC_L1 = "DecL1"
    DEC_L2 = "DecL2"
    OUTPUT_PROJECTION = "OutputProjection"
    COPY_GATE = "CopyGate"


HIGH_LEVEL = frozenset({LayerGroup.ENC_L2, LayerGroup.ATTENTION, LayerGroup.DEC_L1})
LOW_LEVEL = frozenset({LayerGroup.ENC_L1, LayerGroup.DEC_L2})


class PlanPreset(str, enum.Enum):
    FINAL = "final"
    BOTH_HIGH = "both_high"
    BOTH_LOW = "both_low"
    SWAPPED = "swapped"
    HARD = "hard"


class ParameterStore:
    """Named parameter tensors of one task model, each tagged with a group."""

    def __init__(self, task: str = MAIN):
        self.task = task
        self.tensors: dict[str, Tensor] = {}
        self.groups: dict[str, LayerGroup] = {}

    def add(self, name: str, tensor: Tensor, group: LayerGroup) -> Tensor:
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        tensor.requires_grad = True
        tensor.name = name
        self.tensors[name] = tensor
        self.groups[name] = LayerGroup(group)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def names_in(self, groups: Iterable[LayerGroup]) -> list[str]:
        wanted = set(groups)
        return [n for n, g in self.groups.items() if g in wanted]

    def num_parameters(self, group: LayerGroup | None = None) -> int:
        return sum(
            t.size for n, t in self.tensors.items() if group is None or self.groups[n] == group
        )

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self.tensors) - set(state)
        if missing:
            raise ConfigurationError(f"checkpoint lacks parameters: {sorted(missing)}")
        for n, t in self.tensors.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != t.shape:
                raise ConfigurationError(
                    f"shape conflict for {n!r}: checkpoint {arr.shape} vs model {t.shape}"
                )
            t.data[...] = arr


@dataclass(frozen=True)
class SharedPair:
    task_a: str
    task_b: str
    groups: frozenset
    lam: float = 0.0


@dataclass(frozen=True)
class SharingPlan:
    pairs: tuple[SharedPair, ...]
    mode: str = "soft"
    lam: float = 0.0

    def pair(self, task_b: str) -> SharedPair:
        for p in self.pairs:
            if p.task_b == task_b:
                return p
        raise KeyError(task_b)

    def pairs_for(self, task: str) -> list[SharedPair]:
        return [p for p in self.pairs if task in (p.task_a, p.task_b)]


_PRESET_GROUPS = {
    PlanPreset.FINAL: (HIGH_LEVEL, LOW_LEVEL),
    PlanPreset.HARD: (HIGH_LEVEL, LOW_LEVEL),
    PlanPreset.SWAPPED: (LOW_LEVEL, HIGH_LEVEL),
    PlanPreset.BOTH_HIGH: (HIGH_LEVEL, HIGH_LEVEL),
    PlanPreset.BOTH_LOW: (LOW_LEVEL, LOW_LEVEL),
}


def build_plan(
    preset: str | PlanPreset,
    lam: float = 0.0,
    stores: Mapping[str, ParameterStore] | None = None,
    pair_lambdas: Mapping[str, float] | None = None,
) -> SharingPlan:
    """Sharing plan for a preset; validated against ``stores`` when given.

    ``pair_lambdas`` optionally overrides the penalty weight per auxiliary
    task (keys ``"entail"``/``"para"``).
    """
    try:
        preset = PlanPreset(preset)
    except ValueError:
        raise ConfigurationError(
            f"unknown sharing preset {preset!r}; expected one of {[p.value for p in PlanPreset]}"
        ) from None
    if lam < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {lam}")
    pair_lambdas = dict(pair_lambdas or {})
    ent_groups, para_groups = _PRESET_GROUPS[preset]
    mode = "hard" if preset is PlanPreset.HARD else "soft"
    pairs = tuple(
        SharedPair(MAIN, aux, frozenset(groups), float(pair_lambdas.get(aux, lam)))
        for aux, groups in ((ENTAIL, ent_groups), (PARA, para_groups))
    )
    plan = SharingPlan(pairs=pairs, mode=mode, lam=float(lam))
    if stores is not None:
        validate_plan(plan, stores)
    return plan


def validate_plan(plan: SharingPlan, stores: Mapping[str, ParameterStore]) -> None:
    offenders = []
    for pair in plan.pairs:
        if pair.task_a not in stores or pair.task_b not in stores:
            continue
        a, b = stores[pair.task_a], stores[pair.task_b]
        for group in pair.groups:
            names_a, names_b = a.names_in([group]), b.names_in([group])
            if not names_a or sorted(names_a) != sorted(names_b):
                offenders.append(f"{pair.task_a}/{pair.task_b}: group {group.value} names differ")
                continue
            for n in names_a:
                if a[n].shape != b[n].shape:
                    offenders.append(
                        f"{pair.task_a}/{pair.task_b}: {n} {a[n].shape} vs {b[n].shape}"
                    )
    if offenders:
        raise ConfigurationError("cannot share parameters: " + "; ".join(offenders))


def shared_names(pair: SharedPair, store: ParameterStore) -> list[str]:
    return sorted(store.names_in(pair.groups))


def pair_distance(pair: SharedPair, stores: Mapping[str, ParameterStore]) -> Tensor:
    """Euclidean norm of the concatenated differences of a pair's shared tensors."""
    a, b = stores[pair.task_a], stores[pair.task_b]
    total = None
    for n in shared_names(pair, a):
        d = sub(a[n], b[n])
        sq = sum_(mul(d, d))
        total = sq if total is None else add(total, sq)
    if total is None:
        return Tensor(0.0)
    return sqrt_safe(total)


def soft_penalty(
    plan: SharingPlan, stores: Mapping[str, ParameterStore], active_task: str
) -> Tensor:
    """Sum of ``lam * distance`` over the pairs that involve ``active_task``."""
    total = Tensor(0.0)
    if plan.mode != "soft":
        return total
    for pair in plan.pairs_for(active_task):
        if pair.task_a not in stores or pair.task_b not in stores:
            continue
        total = add(total, mul(pair_distance(pair, stores), pair.lam))
    return total


def hard_tie(plan: SharingPlan, stores: Mapping[str, ParameterStore]) -> None:
    """Alias every shared tensor of the auxiliary store to the main one."""
    validate_plan(plan, stores)
    for pair in plan.pairs:
        if pair.task_a not in stores or pair.task_b not in stores:
            continue
        a, b = stores[pair.task_a], stores[pair.task_b]
        for n in shared_names(pair, a):
            b.tensors[n] = a.tensors[n]
