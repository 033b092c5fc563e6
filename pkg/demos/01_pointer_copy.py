"""
Copying unseen words with the pointer-copy output layer
=======================================================

A model trained on a handful of pairs learns to delete marked tokens.  The
words it has to copy at test time were never in its vocabulary, so the only
way to produce them is through the attention (copy) distribution.
"""

import numpy as np

from mtsimplify.config import TrainConfig
from mtsimplify.corpus import source_extended
from mtsimplify.synthetic import overfit_corpus
from mtsimplify.trainer import MultiTaskTrainer, build_tasks

pairs = overfit_corpus(16, seed=0)
for p in pairs[:3]:
    print(" ".join(p.source), "->", " ".join(p.target_words))

# %%
# Single-task training on the 16 pairs until the loss is tiny.
tasks = build_tasks({"main": (pairs, pairs)})
cfg = TrainConfig(mixing_ratio=(1, 0, 0), hidden_size=32, embedding_size=16, batch_size=16, seed=0)
trainer = MultiTaskTrainer(cfg, tasks)
for step in range(1, 2001):
    loss = trainer.train_step("main").loss
    if step % 50 == 0:
        print(f"step {step:4d}  loss {loss:.4f}")
    if loss < 0.05:
        break

# %%
# Now a sentence with two words the vocabulary has never seen.
vocab = tasks["main"].vocab
source = "w3 # qqq w7 zzz w1".split()
ids, ext, oovs = source_extended(source, vocab)
print("source OOVs:", oovs, "-> extended ids", [e for e in ext if e >= len(vocab)])

model = trainer.main
hyp = model.beam_search(ids, beam_size=5, max_len=20, src_ext=ext, n_ext=len(oovs))
print("beam 5 :", " ".join(vocab.decode(hyp.ids, oovs)), f"(log p = {hyp.logprob:.3f})")

# %%
# The copy gate p_g at each decoding step: low values mean "copy".
enc = model.encode(np.array([ids]))
state = model.init_decoder_state(enc)
prev = 2  # BOS
for tok in hyp.ids:
    out, state = model.decoder_step([prev], state, enc, np.array([ext]), len(oovs))
    print(f"{vocab.token(tok, oovs):>6s}  p_g = {out.p_gen.data.item():.3f}")
    prev = tok
