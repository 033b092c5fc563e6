"""Two-layer LSTM encoder/decoder with additive attention and a pointer-copy gate.

Shapes used throughout: ``B`` batch, ``S`` source length, ``T`` target length,
``H`` hidden size, ``E`` embedding size, ``V`` base vocabulary size and ``X``
the number of per-batch extended (source OOV) slots.
"""

from __future__ import annotations

import json
import os
import tempfile
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, ShapeError, Tensor
from .corpus import BOS, EOS, PAD, UNK, SentenceBatch, Vocab
from .sharing import LayerGroup, ParameterStore

CHECKPOINT_FORMAT = "mtsimplify-checkpoint/1"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden_size: int = 256
    embedding_size: int = 128
    num_layers: int = 2
    init_scale: float = 0.1

    def __post_init__(self):
        if self.hidden_size <= 0 or self.embedding_size <= 0:
            raise ValueError("hidden_size and embedding_size must be positive")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must cover the 4 special tokens")
        if self.num_layers != 2:
            raise ValueError("the architecture is fixed at 2 layers")


@dataclass
class EncoderOutput:
    states: Tensor  # B x S x H, top layer
    mask: np.ndarray  # B x S, 1.0 on real positions
    final: list  # per layer (h, c), each B x H
    keys: Tensor  # states @ U_a, cached for attention

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1).astype(int)


@dataclass
class StepOutput:
    p_vocab: Tensor
    alpha: Tensor
    p_gen: Tensor
    p_final: Tensor


@dataclass
class Hypothesis:
    ids: list
    logprob: float
    tokens: list = field(default_factory=list)
    truncated: bool = False


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor):
    """One LSTM step with gate order (input, forget, output, candidate).

    ``w`` maps ``[x, h]`` to the four stacked gate pre-activations.
    """
    n = h.shape[-1]
    if w.shape != (x.shape[-1] + n, 4 * n):
        raise ShapeError(f"lstm weight {w.shape} does not fit input {x.shape} / hidden {h.shape}")
    z = ad.add(ad.matmul(ad.concat([x, h], axis=-1), w), b)
    i = ad.sigmoid(z[..., :n])
    f = ad.sigmoid(z[..., n : 2 * n])
    o = ad.sigmoid(z[..., 2 * n : 3 * n])
    g = ad.tanh(z[..., 3 * n :])
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def final_distribution(p_vocab: Tensor, alpha: Tensor, p_gen: Tensor, src_ext, n_ext: int) -> Tensor:
    """Mix generation and copy distributions over the extended vocabulary.

    ``p_final[y] = p_gen * p_vocab[y] + (1 - p_gen) * sum_{i: src_ext[i] == y} alpha[i]``
    """
    src_ext = np.asarray(src_ext, dtype=np.int64)
    vocab = p_vocab.shape[-1]
    size = vocab + n_ext
    if src_ext.size and src_ext.max() >= size:
        raise ContractError(f"extended id {src_ext.max()} out of range for size {size}")
    gen = ad.mul(p_gen, p_vocab)
    if n_ext:
        gen = ad.concat([gen, Tensor(np.zeros(gen.shape[:-1] + (n_ext,)))], axis=-1)
    copy = ad.scatter_add(ad.mul(ad.sub(1.0, p_gen), alpha), src_ext, size)
    return ad.add(gen, copy)


def nll_from_distributions(p_finals, targets, mask, floor: float = 1e-12):
    """Token-mean then batch-mean negative log-likelihood.

    ``p_finals`` is a list (one per decoder step) of ``B x (V+X)`` tensors.
    Returns ``(loss, n_clamped)``.
    """
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=np.float64)
    tokens = np.maximum(mask.sum(axis=1), 1.0)
    total = None
    clamped = 0
    for t, p in enumerate(p_finals):
        if not mask[:, t].any():
            continue
        picked = p.data[np.arange(targets.shape[0]), targets[:, t]]
        clamped += int(np.sum((picked <= floor) & (mask[:, t] > 0)))
        nll = ad.cross_entropy(p, targets[:, t], floor)
        term = ad.sum_(ad.mul(nll, mask[:, t] / tokens))
        total = term if total is None else ad.add(total, term)
    if total is None:
        return Tensor(0.0), clamped
    return ad.mul(total, 1.0 / targets.shape[0]), clamped


class PointerGenerator:
    """Attention seq2seq with pointer-copy output layer.

    Parameters live in a :class:`ParameterStore` and are looked up on every
    call, so hard-tied tensors are picked up automatically.
    """

    def __init__(
        self,
        config: ModelConfig,
        rng: np.random.Generator | None = None,
        store: ParameterStore | None = None,
        task: str = "main",
    ):
        self.config = config
        self.store = store if store is not None else self._init_store(config, rng, task)
        self.clamp_count = 0

    @staticmethod
    def _init_store(config: ModelConfig, rng, task: str) -> ParameterStore:
        rng = rng if rng is not None else np.random.default_rng(0)
        V, H, E, s = config.vocab_size, config.hidden_size, config.embedding_size, config.init_scale
        store = ParameterStore(task)

        def u(*shape):
            return Tensor(rng.uniform(-s, s, size=shape))

        def z(*shape):
            return Tensor(np.zeros(shape))

        G = LayerGroup
        store.add("embedding", u(V, E), G.EMBEDDING)
        store.add("encoder.l1.w", u(E + H, 4 * H), G.ENC_L1)
        store.add("encoder.l1.b", z(4 * H), G.ENC_L1)
        store.add("encoder.l2.w", u(2 * H, 4 * H), G.ENC_L2)
        store.add("encoder.l2.b", z(4 * H), G.ENC_L2)
        store.add("attention.w_a", u(H, H), G.ATTENTION)
        store.add("attention.u_a", u(H, H), G.ATTENTION)
        store.add("attention.b_a", z(H), G.ATTENTION)
        store.add("attention.v_a", u(H, 1), G.ATTENTION)
        store.add("decoder.l1.w", u(E + H, 4 * H), G.DEC_L1)
        store.add("decoder.l1.b", z(4 * H), G.DEC_L1)
        store.add("decoder.l2.w", u(2 * H, 4 * H), G.DEC_L2)
        store.add("decoder.l2.b", z(4 * H), G.DEC_L2)
        store.add("output.w_c", u(2 * H, H), G.OUTPUT_PROJECTION)
        store.add("output.w_s", u(H, V), G.OUTPUT_PROJECTION)
        store.add("copy.w_g", u(H, 1), G.COPY_GATE)
        store.add("copy.u_g", u(H, 1), G.COPY_GATE)
        store.add("copy.v_g", u(E, 1), G.COPY_GATE)
        store.add("copy.b_g", z(1), G.COPY_GATE)
        return store

    def parameters(self) -> list[Tensor]:
        return self.store.parameters()

    # encoder -----------------------------------------------------------------

    def encode(self, src_ids, src_mask=None) -> EncoderOutput:
        src_ids = np.atleast_2d(np.asarray(src_ids, dtype=np.int64))
        B, S = src_ids.shape
        if S == 0:
            raise ContractError("empty source")
        mask = np.ones((B, S)) if src_mask is None else np.asarray(src_mask, dtype=np.float64)
        if not np.all(mask.sum(axis=1) > 0):
            raise ContractError("empty source")
        p = self.store
        H = self.config.hidden_size
        emb = ad.embedding(p["embedding"], src_ids)
        state = [(Tensor(np.zeros((B, H))), Tensor(np.zeros((B, H)))) for _ in range(2)]
        tops = []
        for t in range(S):
            m = mask[:, t : t + 1]
            x = emb[:, t, :]
            for layer, prefix in enumerate(("encoder.l1", "encoder.l2")):
                h, c = state[layer]
                h_new, c_new = lstm_cell(x, h, c, p[prefix + ".w"], p[prefix + ".b"])
                if not np.all(m == 1.0):
                    # padded positions carry the previous state through
                    h_new = ad.add(ad.mul(h_new, m), ad.mul(h, 1.0 - m))
                    c_new = ad.add(ad.mul(c_new, m), ad.mul(c, 1.0 - m))
                state[layer] = (h_new, c_new)
                x = h_new
            tops.append(x)
        states = ad.stack(tops, axis=1)
        keys = ad.matmul(states, p["attention.u_a"])
        return EncoderOutput(states=states, mask=mask, final=state, keys=keys)

    # decoder pieces --------------------------------------------------------------

    def attend(self, s_t: Tensor, enc: EncoderOutput):
        """Additive attention ``e_i = v^T tanh(W s_t + U h_i + b)``; returns ``(alpha, context)``."""
        p = self.store
        B, S, H = enc.states.shape
        query = ad.reshape(ad.matmul(s_t, p["attention.w_a"]), (B, 1, H))
        hidden = ad.tanh(ad.add(ad.add(enc.keys, query), p["attention.b_a"]))
        scores = ad.reshape(ad.matmul(hidden, p["attention.v_a"]), (B, S))
        alpha = ad.softmax(scores, axis=-1, mask=enc.mask > 0)
        context = ad.reshape(ad.matmul(ad.reshape(alpha, (B, 1, S)), enc.states), (B, H))
        return alpha, context

    def generation_head(self, context: Tensor, s_t: Tensor) -> Tensor:
        p = self.store
        s_prime = ad.tanh(ad.matmul(ad.concat([context, s_t], axis=-1), p["output.w_c"]))
        return ad.softmax(ad.matmul(s_prime, p["output.w_s"]), axis=-1)

    def copy_gate(self, context: Tensor, s_t: Tensor, d_t: Tensor) -> Tensor:
        p = self.store
        z = ad.add(
            ad.add(ad.matmul(context, p["copy.w_g"]), ad.matmul(s_t, p["copy.u_g"])),
            ad.add(ad.matmul(d_t, p["copy.v_g"]), p["copy.b_g"]),
        )
        return ad.sigmoid(z)

    def init_decoder_state(self, enc: EncoderOutput):
        return list(enc.final)

    def decoder_step(self, prev_ids, state, enc: EncoderOutput, src_ext, n_ext: int):
        """Advance the decoder by one token; returns ``(StepOutput, new_state)``."""
        p = self.store
        prev_ids = np.asarray(prev_ids, dtype=np.int64)
        prev_ids = np.where(prev_ids >= self.config.vocab_size, UNK, prev_ids)
        d_t = ad.embedding(p["embedding"], prev_ids)
        x = d_t
        new_state = []
        for layer, prefix in enumerate(("decoder.l1", "decoder.l2")):
            h, c = state[layer]
            h, c = lstm_cell(x, h, c, p[prefix + ".w"], p[prefix + ".b"])
            new_state.append((h, c))
            x = h
        s_t = x
        alpha, context = self.attend(s_t, enc)
        p_vocab = self.generation_head(context, s_t)
        p_gen = self.copy_gate(context, s_t, d_t)
        p_final = final_distribution(p_vocab, alpha, p_gen, src_ext, n_ext)
        return StepOutput(p_vocab, alpha, p_gen, p_final), new_state

    # training objective -------------------------------------------------------------

    def step_outputs(self, batch: SentenceBatch) -> list[StepOutput]:
        enc = self.encode(batch.src_ids, batch.src_mask)
        state = self.init_decoder_state(enc)
        outs = []
        for t in range(batch.tgt_ids.shape[1] - 1):
            out, state = self.decoder_step(
                batch.tgt_ids[:, t], state, enc, batch.src_ext, batch.n_ext
            )
            outs.append(out)
        return outs

    def sequence_loss(self, batch: SentenceBatch) -> Tensor:
        """Teacher-forced ``-log p_final`` of the gold extended target ids."""
        outs = self.step_outputs(batch)
        loss, clamped = nll_from_distributions(
            [o.p_final for o in outs], batch.tgt_ids[:, 1:], batch.tgt_mask[:, 1:]
        )
        if clamped:
            self.clamp_count += clamped
            warnings.warn(f"{clamped} target probabilities clamped at 1e-12", RuntimeWarning)
        return loss

    # decoding ---------------------------------------------------------------------------

    def _prepare_source(self, source_ids, src_ext, n_ext):
        src = np.asarray(source_ids, dtype=np.int64).reshape(1, -1)
        ext = src if src_ext is None else np.asarray(src_ext, dtype=np.int64).reshape(1, -1)
        return src, ext, n_ext

    def greedy_decode(self, source_ids, max_len: int, src_ext=None, n_ext: int = 0) -> Hypothesis:
        src, ext, n_ext = self._prepare_source(source_ids, src_ext, n_ext)
        enc = self.encode(src)
        state = self.init_decoder_state(enc)
        prev, ids, logprob = BOS, [], 0.0
        for _ in range(max_len):
            out, state = self.decoder_step([prev], state, enc, ext, n_ext)
            probs = out.p_final.data[0]
            tok = int(np.argmax(probs))
            logprob += float(np.log(max(probs[tok], 1e-300)))
            if tok == EOS:
                return Hypothesis(ids, logprob)
            ids.append(tok)
            prev = tok
        return Hypothesis(ids, logprob, truncated=True)

    def beam_search(
        self, source_ids, beam_size: int = 5, max_len: int = 50, src_ext=None, n_ext: int = 0
    ) -> Hypothesis:
        """Highest cumulative log-probability hypothesis (no length normalisation).

        Search stops once no live hypothesis can beat the best completed one.
        When ``max_len`` cuts the search short, the best live hypothesis is
        returned (``truncated=True``) if it outscores every completed one.
        The greedy path acts as a floor, so the result never scores below
        :meth:`greedy_decode`.
        """
        if beam_size < 1:
            raise ContractError("beam_size must be >= 1")
        src, ext, n_ext = self._prepare_source(source_ids, src_ext, n_ext)
        enc = self.encode(src)
        state0 = self.init_decoder_state(enc)
        # live beams: (logprob, ids, state)
        beams = [(0.0, [], state0)]
        done: list[Hypothesis] = []
        for _ in range(max_len):
            k = len(beams)
            tiled = EncoderOutput(
                states=Tensor(np.repeat(enc.states.data, k, axis=0)),
                mask=np.repeat(enc.mask, k, axis=0),
                final=enc.final,
                keys=Tensor(np.repeat(enc.keys.data, k, axis=0)),
            )
            state = [
                (
                    Tensor(np.concatenate([b[2][layer][0].data for b in beams])),
                    Tensor(np.concatenate([b[2][layer][1].data for b in beams])),
                )
                for layer in range(2)
            ]
            prev = [b[1][-1] if b[1] else BOS for b in beams]
            out, new_state = self.decoder_step(prev, state, tiled, np.repeat(ext, k, axis=0), n_ext)
            logp = np.log(np.maximum(out.p_final.data, 1e-300))
            candidates = []
            for j, (score, _, _) in enumerate(beams):
                for tok in np.argsort(-logp[j], kind="stable")[: 2 * beam_size]:
                    candidates.append((score + float(logp[j, tok]), j, int(tok)))
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
            live = []
            for score, j, tok in candidates:
                if tok == EOS:
                    done.append(Hypothesis(list(beams[j][1]), score))
                else:
                    st = [
                        (
                            Tensor(new_state[layer][0].data[j : j + 1]),
                            Tensor(new_state[layer][1].data[j : j + 1]),
                        )
                        for layer in range(2)
                    ]
                    live.append((score, beams[j][1] + [tok], st))
                if len(live) == beam_size:
                    break
            beams = live
            best_done = max((h.logprob for h in done), default=-np.inf)
            # scores only decrease, so no live beam can overtake best_done
            if not beams or best_done >= beams[0][0]:
                break
        best = max(done, key=lambda h: h.logprob, default=None)
        if beams and (best is None or beams[0][0] > best.logprob):
            # max_len reached with a live beam scoring above every finished one
            score, ids, _ = beams[0]
            best = Hypothesis(ids, score, truncated=True)
        if beam_size > 1:
            # pruning can drop the greedy path on flat distributions; never return worse
            greedy = self.greedy_decode(source_ids, max_len, src_ext, n_ext)
            if greedy.logprob > best.logprob:
                return greedy
        return best

    # checkpoints ---------------------------------------------------------------------------

    def save(self, path, vocab: Vocab | None = None, extra: dict | None = None) -> None:
        meta = {"config": asdict(self.config), "task": self.store.task}
        if vocab is not None:
            meta["vocab"] = vocab.to_json()
        if extra:
            meta.update(extra)
        save_checkpoint(path, self.store.state_dict(), meta)

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        config = ModelConfig(**meta["config"])
        model = cls(config, rng=np.random.default_rng(0), task=meta.get("task", "main"))
        model.store.load_state_dict(tensors)
        vocab = Vocab.from_json(meta["vocab"]) if "vocab" in meta else None
        return model, vocab, meta


def save_checkpoint(path, tensors: dict, meta: dict) -> None:
    """Write named float64 tensors plus JSON metadata atomically (npz container)."""
    path = os.fspath(path)
    payload = {"__meta__": np.array(json.dumps({"format": CHECKPOINT_FORMAT, **meta}))}
    for name, arr in tensors.items():
        payload["t/" + name] = np.asarray(arr, dtype=np.float64)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    with np.load(os.fspath(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
        tensors = {k[2:]: data[k].copy() for k in data.files if k.startswith("t/")}
    return tensors, meta
