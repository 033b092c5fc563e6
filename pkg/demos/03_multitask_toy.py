"""
Soft-shared multi-task training on the synthetic suite
======================================================

The main task deletes marked tokens; the auxiliaries drop a fixed word class
(an entailment-like subsequence) and substitute words (a paraphrase-like
map).  High-level layers are softly tied to the first auxiliary and
low-level layers to the second.  Takes a few minutes on one core.
"""

import numpy as np

from mtsimplify.config import TrainConfig
from mtsimplify.sharing import build_plan
from mtsimplify.synthetic import make_suite
from mtsimplify.trainer import MultiTaskTrainer, build_tasks

suite = make_suite(seed=0)
for task, (train, dev) in suite.items():
    p = train[0]
    print(f"{task:7s} {len(train):4d} train  e.g. {' '.join(p.source)} -> {' '.join(p.target_words)}")

tasks = build_tasks(suite, shared_vocab=True)
base = dict(batch_size=16, hidden_size=32, embedding_size=16, learning_rate=0.002, seed=0)

# %%
# Single-task baseline: 800 main-task batches.
single = MultiTaskTrainer(TrainConfig(mixing_ratio=(1, 0, 0), **base), {"main": tasks["main"]})
single.train_static(800)
print(f"single-task main dev loss: {single.dev_loss():.4f}")

# %%
# Static 1:1:1 mixing with soft sharing: also 800 main batches.
plan = build_plan("final", lam=0.01)
multi = MultiTaskTrainer(TrainConfig(mixing_ratio=(1, 1, 1), lam=0.01, **base), tasks, plan)
multi.train_static(2400)
print(f"3-way multi-task main dev loss: {multi.dev_loss():.4f}")
penalties = [r.penalty for r in multi.history if r.task == "main"]
print(f"sharing penalty on main steps: first {penalties[0]:.4f}, last {penalties[-1]:.4f}")

# %%
# Bandit scheduling: 90 rounds of 10 batches, reward = -validation loss / 2.
dynamic = MultiTaskTrainer(TrainConfig(mixing_ratio=(1, 1, 1), lam=0.01, n_s=10, **base), tasks, plan)
trace = dynamic.train_dynamic(90)
print(f"dynamic main dev loss: {dynamic.dev_loss():.4f}; pulls per task {dynamic.bandit.pulls.tolist()}")
print("last-round policy:", np.round(trace[-1].policy, 3))
