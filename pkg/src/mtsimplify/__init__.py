"""Multi-task pointer-copy sentence simplification at desk scale."""

from .autodiff import Tape, Tensor, backward
from .bandit import BanditState
from .config import TrainConfig, load_config
from .corpus import Vocab, build_vocab, load_pairs, make_batches
from .metrics import bleu, corpus_sari, evaluate, fkgl, match_with_input, rouge_l, sari
from .model import ModelConfig, PointerGenerator
from .sharing import LayerGroup, ParameterStore, PlanPreset, build_plan, hard_tie, soft_penalty
from .trainer import MultiTaskTrainer, TaskData, build_tasks, ratio_from_trace, selection_score

__version__ = "0.1.0"
