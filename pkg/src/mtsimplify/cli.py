"""Command-line entry point: ``train``, ``decode``, ``evaluate`` and ``trace-report``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bandit as bd
from .config import ConfigError, load_config, write_config
from .corpus import CorpusError, load_pairs, source_extended
from .metrics import MetricError, bleu, corpus_sari, evaluate, fkgl, is_word, sentence_rows
from .model import ModelConfig, PointerGenerator, load_checkpoint
from .sharing import MAIN, ConfigurationError, build_plan
from .trainer import MultiTaskTrainer, build_tasks, ratio_from_trace, selection_score

log = logging.getLogger("mtsimplify")


class UsageError(Exception):
    pass


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _read_lines(path) -> list[str]:
    if str(path) == "-":
        return sys.stdin.read().splitlines()
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


# decoding helpers -------------------------------------------------------------------


def decode_tokens(model: PointerGenerator, vocab, tokens, beam: int, max_len: int):
    ids, ext, oovs = source_extended(tokens, vocab)
    if beam == 1:
        hyp = model.greedy_decode(ids, max_len, ext, len(oovs))
    else:
        hyp = model.beam_search(ids, beam, max_len, ext, len(oovs))
    hyp.tokens = vocab.decode(hyp.ids, oovs)
    return hyp


def selection_metrics(trainer: MultiTaskTrainer) -> dict:
    """Decode the main dev subset and score it with SARI, BLEU and FKGL."""
    cfg = trainer.cfg
    task = trainer.tasks[MAIN]
    dev = task.dev[: cfg.eval_subset_size]
    outs = [
        decode_tokens(trainer.main, task.vocab, p.source, cfg.selection_beam, cfg.max_len).tokens for p in dev
    ]
    refs = [[list(p.target_words)] for p in dev]
    s = corpus_sari([p.source for p in dev], outs, refs).total
    b = bleu(outs, refs)
    f = fkgl(outs) if any(is_word(t) for o in outs for t in o) else 0.0
    return {"sari": s, "bleu": b, "fkgl": f, "score": selection_score(s, b, f)}


# commands ----------------------------------------------------------------------------


def cmd_train(args) -> int:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = load_config(args.config, overrides)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    if cfg.schedule == "ratio_from_trace":
        if not cfg.trace_path:
            raise ConfigError("trace.path", "ratio_from_trace needs a bandit trace file")
        ratio = ratio_from_trace(bd.read_trace_csv(cfg.trace_path), cfg.trace_fraction)
        cfg = replace(cfg, mixing_ratio=ratio)
        log.info("mixing ratio from trace: %s", ratio)

    pairs = {}
    for task in cfg.active_tasks():
        paths = {}
        for split in ("train", "dev"):
            for side in ("source", "target"):
                key = f"data.{task}.{split}.{side}"
                if key not in cfg.data:
                    if split == "dev" and task != MAIN:
                        continue
                    raise ConfigError(key, "required data path is not set")
                paths[(split, side)] = cfg.data[key]
        for p in paths.values():
            if not Path(p).exists():
                raise FileNotFoundError(f"missing data file {p}")
        train = load_pairs(paths["train", "source"], paths["train", "target"])
        dev = load_pairs(paths["dev", "source"], paths["dev", "target"]) if ("dev", "source") in paths else []
        pairs[task] = (train, dev)

    tasks = build_tasks(pairs, cfg.vocab_cap, cfg.shared_vocab)
    plan = build_plan(cfg.preset, cfg.lam) if len(tasks) > 1 else None
    trainer = MultiTaskTrainer(cfg, tasks, plan)
    write_config(cfg, out / "config.txt")
    tasks[MAIN].vocab.save(out / "vocab.main.txt")

    total = cfg.steps if cfg.schedule in ("static", "ratio_from_trace") else cfg.rounds
    chunk = cfg.eval_every if cfg.eval_every > 0 else total
    done, best = 0, -np.inf
    rows = []
    while done < total:
        n = min(chunk, total - done)
        if cfg.schedule in ("static", "ratio_from_trace"):
            trainer.train_static(n)
        elif cfg.schedule == "dynamic":
            trainer.train_dynamic(n)
        else:
            trainer.train_random(n)
        done += n
        m = selection_metrics(trainer)
        rows.append({"step": trainer.step, **m})
        log.info("step %d: %s", trainer.step, m)
        trainer.save(out / "checkpoint.npz")
        if m["score"] > best:
            best = m["score"]
            trainer.save_main_model(out / "best.npz")
    trainer.save_main_model(out / "last.npz")
    trainer.write_history(out / "history.csv")
    if trainer.bandit is not None:
        bd.write_trace_csv(trainer.bandit.trace, out / "trace.csv")
    with open(out / "selection.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["step", "sari", "bleu", "fkgl", "score"])
        w.writeheader()
        w.writerows(rows)
    print(f"trained {trainer.step} batches; best selection score {best:.4f}; outputs in {out}")
    return 0


def cmd_decode(args) -> int:
    if args.beam < 1:
        raise UsageError("--beam must be >= 1")
    model, vocab, meta = PointerGenerator.load(args.model)
    if args.config:
        cfg = load_config(args.config)
        mc = ModelConfig(len(vocab), cfg.hidden_size, cfg.embedding_size)
        candidate = PointerGenerator(mc, rng=np.random.default_rng(0))
        tensors, _ = load_checkpoint(args.model)
        candidate.store.load_state_dict(tensors)
        model = candidate
    if vocab is None:
        raise ConfigurationError("checkpoint carries no vocabulary")
    lines = _read_lines(args.input)
    outs = []
    for line in lines:
        toks = line.split()
        outs.append(" ".join(decode_tokens(model, vocab, toks, args.beam, args.max_len).tokens) if toks else "")
    _atomic_write_text(args.output, "".join(o + "\n" for o in outs))
    return 0


def format_report(report: dict) -> str:
    return "".join(f"{k} = {v:.4f}\n" for k, v in report.items())


def cmd_evaluate(args) -> int:
    sources = [l.split() for l in _read_lines(args.source)]
    outputs = [l.split() for l in _read_lines(args.output)]
    ref_files = [r for r in args.refs.split(",") if r]
    refs_per_file = [[l.split() for l in _read_lines(r)] for r in ref_files]
    counts = [len(sources), len(outputs)] + [len(r) for r in refs_per_file]
    if len(set(counts)) != 1:
        names = [args.source, args.output] + ref_files
        detail = ", ".join(f"{n}: {c}" for n, c in zip(names, counts))
        raise MetricError(f"misaligned files ({detail})")
    refs = [list(r) for r in zip(*refs_per_file)]
    report = evaluate(sources, outputs, refs).to_dict()
    text = format_report(report)
    sys.stdout.write(text)
    if args.report:
        _atomic_write_text(args.report, text)
    if args.csv:
        rows = sentence_rows(sources, outputs, refs)
        tmp = Path(args.csv).with_name(Path(args.csv).name + ".tmp")
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["index"])
            w.writeheader()
            w.writerows(rows)
        os.replace(tmp, args.csv)
    return 0


def cmd_trace_report(args) -> int:
    records = bd.read_trace_csv(args.trace)
    if not records:
        raise bd.BanditError("trace has no rounds")
    m = len(records[0].policy)
    counts = np.bincount([r.arm for r in records], minlength=m)
    ratio = ratio_from_trace(records, args.fraction, m)
    print(f"rounds = {len(records)}")
    for i, c in enumerate(counts):
        print(f"arm_{i}.count = {c}")
    print("ratio = " + ":".join(str(x) for x in ratio))
    avg = bd.moving_average(records, args.window)
    freq = bd.selection_frequencies(records, args.window)
    header = ["round"] + [f"p_{i}" for i in range(m)] + [f"freq_{i}" for i in range(m)]
    lines = [",".join(header)]
    for r, p, f in zip(records, avg, freq):
        lines.append(f"{r.round}," + ",".join(f"{x:.6f}" for x in np.concatenate([p, f])))
    table = "\n".join(lines) + "\n"
    if args.table:
        _atomic_write_text(args.table, table)
    else:
        sys.stdout.write(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtsimplify", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a (multi-task) model")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("overrides", nargs="*", metavar="key=value")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode one sentence per line")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len", type=int, default=50)
    p.add_argument("--config", help="check the checkpoint against this config's model sizes")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", help="SARI, BLEU, FKGL and match-with-input")
    p.add_argument("--source", required=True)
    p.add_argument("--output", required=True, help="system output ('-' for stdin)")
    p.add_argument("--refs", required=True, help="comma-separated reference files")
    p.add_argument("--report", help="also write the key = value report here")
    p.add_argument("--csv", help="per-sentence scores")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("trace-report", help="summarise a bandit trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--table", help="write the moving-average table here instead of stdout")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_trace_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, CorpusError, MetricError, bd.BanditError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
