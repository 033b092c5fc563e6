import subprocess
import sys
from pathlib import Path

import pytest

from mtsimplify import bandit as bd
from mtsimplify.cli import decode_tokens, main
from mtsimplify.corpus import write_pairs
from mtsimplify.model import PointerGenerator
from mtsimplify.synthetic import SuiteSpec, make_suite, overfit_corpus

GOLDEN = Path(__file__).parent / "golden"
SMALL = SuiteSpec(num_words=12, main_train=16, main_dev=8, aux_train=16, aux_dev=4)


def write_config(tmp_path, extra=""):
    suite = make_suite(0, SMALL)
    lines = []
    for task, (train, dev) in suite.items():
        for split, pairs in (("train", train), ("dev", dev)):
            s, t = tmp_path / f"{task}.{split}.src", tmp_path / f"{task}.{split}.tgt"
            write_pairs(pairs, s, t)
            lines += [f"data.{task}.{split}.source = {s}", f"data.{task}.{split}.target = {t}"]
    lines += [
        "model.hidden_size = 6",
        "model.embedding_size = 4",
        "batch_size = 4",
        "max_len = 10",
        f"output_dir = {tmp_path / 'run'}",
    ]
    path = tmp_path / "toy.conf"
    path.write_text("\n".join(lines) + "\n" + extra)
    return path


def test_train_static(tmp_path, capsys):
    conf = write_config(tmp_path)
    assert main(["train", "--config", str(conf), "schedule=static", "mixing_ratio=6:1:3", "steps=10", "eval_every=5"]) == 0
    run = tmp_path / "run"
    for name in ("best.npz", "last.npz", "checkpoint.npz", "history.csv", "selection.csv", "config.txt"):
        assert (run / name).exists(), name
    assert not (run / "trace.csv").exists()
    tasks = [l.split(",")[1] for l in (run / "history.csv").read_text().splitlines()[1:]]
    assert tasks == ["main"] * 6 + ["entail"] + ["para"] * 3
    assert "mixing_ratio = 6:1:3" in (run / "config.txt").read_text()


def test_train_dynamic_emits_trace(tmp_path):
    conf = write_config(tmp_path)
    assert main(["train", "--config", str(conf), "schedule=dynamic", "n_s=2", "rounds=3"]) == 0
    trace = bd.read_trace_csv(tmp_path / "run" / "trace.csv")
    assert len(trace) == 3
    assert len(bd.replay(trace, 3, 0.0, 0.3)[-1]) == 3


def test_train_ratio_from_trace(tmp_path):
    trace = tmp_path / "t.csv"
    bd.write_trace_csv([bd.TraceRecord(i + 1, a, -1.0, (1 / 3,) * 3) for i, a in enumerate([0, 0, 2])], trace)
    conf = write_config(tmp_path)
    args = ["train", "--config", str(conf), "schedule=ratio_from_trace", f"trace.path={trace}", "trace.fraction=1", "steps=3"]
    assert main(args) == 0
    tasks = [l.split(",")[1] for l in (tmp_path / "run" / "history.csv").read_text().splitlines()[1:]]
    assert tasks == ["main", "main", "para"]


def test_bad_key_exits_2_and_names_key(tmp_path, capsys):
    assert main(["train", "foo=1"]) == 2
    assert "foo" in capsys.readouterr().err


def test_missing_data_fails(tmp_path, capsys):
    conf = write_config(tmp_path)
    (tmp_path / "main.train.src").unlink()
    assert main(["train", "--config", str(conf), "steps=1"]) == 1
    assert "main.train.src" in capsys.readouterr().err
    assert main(["train", "steps=1"]) == 2


def test_unknown_flag_rejected():
    with pytest.raises(SystemExit) as info:
        main(["decode", "--bogus"])
    assert info.value.code == 2


@pytest.fixture(scope="module")
def overfit_model(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("overfit")
    pairs = overfit_corpus(16, 0)
    write_pairs(pairs, tmp / "s.txt", tmp / "t.txt")
    conf = tmp / "o.conf"
    conf.write_text(
        "\n".join(
            [
                f"data.main.train.source = {tmp / 's.txt'}",
                f"data.main.train.target = {tmp / 't.txt'}",
                f"data.main.dev.source = {tmp / 's.txt'}",
                f"data.main.dev.target = {tmp / 't.txt'}",
                "mixing_ratio = 1:0:0",
                "steps = 600",
                "learning_rate = 0.01",
                "model.hidden_size = 32",
                "model.embedding_size = 16",
                f"output_dir = {tmp / 'run'}",
            ]
        )
    )
    assert main(["train", "--config", str(conf)]) == 0
    return tmp, pairs, conf


def test_decode_reproduces_overfit_corpus(overfit_model):
    tmp, pairs, _ = overfit_model
    assert main(["decode", "--model", str(tmp / "run" / "best.npz"), "--input", str(tmp / "s.txt"), "--output", str(tmp / "out.txt")]) == 0
    assert (tmp / "out.txt").read_text() == (tmp / "t.txt").read_text()


def test_decode_beam_one_is_greedy(overfit_model, tmp_path):
    tmp, pairs, _ = overfit_model
    ckpt = tmp / "run" / "best.npz"
    assert main(["decode", "--model", str(ckpt), "--input", str(tmp / "s.txt"), "--output", str(tmp_path / "b1.txt"), "--beam", "1"]) == 0
    model, vocab, _ = PointerGenerator.load(ckpt)
    greedy = [" ".join(decode_tokens(model, vocab, p.source, 1, 50).tokens) for p in pairs]
    assert (tmp_path / "b1.txt").read_text().splitlines() == greedy


def test_decode_empty_input(overfit_model, tmp_path):
    tmp, _, _ = overfit_model
    (tmp_path / "empty.txt").write_text("")
    assert main(["decode", "--model", str(tmp / "run" / "best.npz"), "--input", str(tmp_path / "empty.txt"), "--output", str(tmp_path / "o.txt")]) == 0
    assert (tmp_path / "o.txt").read_text() == ""


def test_decode_config_mismatch(overfit_model, tmp_path, capsys):
    tmp, _, _ = overfit_model
    (tmp_path / "c.conf").write_text("model.hidden_size = 8\n")
    code = main(["decode", "--model", str(tmp / "run" / "best.npz"), "--input", str(tmp / "s.txt"), "--output", str(tmp_path / "o.txt"), "--config", str(tmp_path / "c.conf")])
    assert code == 1
    assert "shape conflict" in capsys.readouterr().err


def _write(tmp_path, name, lines):
    p = tmp_path / name
    p.write_text("".join(l + "\n" for l in lines))
    return str(p)


SRC = ["the old man walked slowly home .", "she is a very good teacher ."]
OUT = ["the man walked home .", "she is a good teacher ."]
REF = ["the old man walked home .", "she teaches well ."]


def test_evaluate_identity(tmp_path, capsys):
    f = _write(tmp_path, "s.txt", SRC)
    assert main(["evaluate", "--source", f, "--output", f, "--refs", f]) == 0
    report = dict(l.split(" = ") for l in capsys.readouterr().out.splitlines())
    assert report["sari"] == "33.3333" and report["bleu"] == "100.0000"
    assert report["exact_match"] == "1.0000" and report["input.exact_match"] == "100.0000"


def test_evaluate_golden_report(tmp_path, capsys):
    s, o, r = _write(tmp_path, "s", SRC), _write(tmp_path, "o", OUT), _write(tmp_path, "r", REF)
    assert main(["evaluate", "--source", s, "--output", o, "--refs", r, "--report", str(tmp_path / "rep.txt"), "--csv", str(tmp_path / "rows.csv")]) == 0
    out = capsys.readouterr().out
    assert out == (GOLDEN / "evaluate_report.txt").read_text()
    assert (tmp_path / "rep.txt").read_text() == out
    rows = (tmp_path / "rows.csv").read_text().splitlines()
    assert rows[0].startswith("index,sari,") and len(rows) == 3


def test_evaluate_two_refs_change_keep(tmp_path, capsys):
    s, o, r = _write(tmp_path, "s", SRC), _write(tmp_path, "o", OUT), _write(tmp_path, "r", REF)
    r2 = _write(tmp_path, "r2", OUT)
    main(["evaluate", "--source", s, "--output", o, "--refs", r])
    one = dict(l.split(" = ") for l in capsys.readouterr().out.splitlines())
    main(["evaluate", "--source", s, "--output", o, "--refs", f"{r},{r2}"])
    two = dict(l.split(" = ") for l in capsys.readouterr().out.splitlines())
    assert one["sari.keep"] != two["sari.keep"]


def test_evaluate_misaligned(tmp_path, capsys):
    s, o = _write(tmp_path, "s", SRC), _write(tmp_path, "o", OUT[:1])
    assert main(["evaluate", "--source", s, "--output", o, "--refs", s]) == 1
    err = capsys.readouterr().err
    assert ": 2" in err and ": 1" in err


def test_evaluate_stdin_matches_file(tmp_path):
    s, o, r = _write(tmp_path, "s", SRC), _write(tmp_path, "o", OUT), _write(tmp_path, "r", REF)
    cmd = [sys.executable, "-m", "mtsimplify", "evaluate", "--source", s, "--refs", r]
    from_file = subprocess.run(cmd + ["--output", o], capture_output=True, text=True, check=True).stdout
    piped = subprocess.run(cmd + ["--output", "-"], input=Path(o).read_text(), capture_output=True, text=True, check=True).stdout
    assert from_file == piped and from_file


def test_trace_report_hand_trace(tmp_path, capsys):
    path = tmp_path / "t.csv"
    bd.write_trace_csv([bd.TraceRecord(i + 1, a, -0.5, (0.2, 0.3, 0.5)) for i, a in enumerate([0, 0, 1, 2, 0])], path)
    assert main(["trace-report", "--trace", str(path), "--fraction", "1.0", "--window", "2"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[:5] == ["rounds = 5", "arm_0.count = 3", "arm_1.count = 1", "arm_2.count = 1", "ratio = 3:1:1"]
    assert out[5] == "round,p_0,p_1,p_2,freq_0,freq_1,freq_2"
    assert out[-1] == "5,0.200000,0.300000,0.500000,0.500000,0.000000,0.500000"


def test_trace_report_uniform_ratio(tmp_path, capsys):
    path = tmp_path / "t.csv"
    bd.write_trace_csv([bd.TraceRecord(i + 1, i % 3, 0.0, (1 / 3,) * 3) for i in range(3000)], path)
    assert main(["trace-report", "--trace", str(path), "--table", str(tmp_path / "tab.csv")]) == 0
    assert "ratio = 1:1:1" in capsys.readouterr().out.splitlines()
    assert len((tmp_path / "tab.csv").read_text().splitlines()) == 3001


def test_trace_report_malformed_row(tmp_path, capsys):
    path = tmp_path / "t.csv"
    path.write_text("round,arm,reward,p_0,p_1,p_2\n1,0,-0.1,0.3,0.3,0.4\n2,zero,-0.1,0.3,0.3,0.4\n")
    assert main(["trace-report", "--trace", str(path)]) == 1
    assert "row 3" in capsys.readouterr().err
