import json

import pytest

from tgsample.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, _settings, build_parser, main, read_config, write_config

TRAIN = ["--synth", "thm2:horizon=120", "--strategy", "truncation", "--k", "1", "--epochs", "2", "--d-z", "4",
         "--batch-size", "40"]


def _jsonl(path):
    return [json.loads(x) for x in path.read_text().splitlines()]


def _content(rec):
    return {k: v for k, v in rec.items() if k != "wall_ms"}


def test_synth_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "--synth", "thm1:k=2,horizon=1000", "--out", str(tmp_path / d)]) == EXIT_OK
    a, b = (tmp_path / "a" / "thm1_k2_T1000.csv").read_bytes(), (tmp_path / "b" / "thm1_k2_T1000.csv").read_bytes()
    assert a == b
    assert len(a.decode().strip().splitlines()) == 1 + 2000  # header plus events
    assert (tmp_path / "a" / "thm1_k2_T1000.pairs.csv").read_bytes() == (tmp_path / "b" / "thm1_k2_T1000.pairs.csv").read_bytes()


def test_train_then_eval_round_trip(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", *TRAIN, "--out", str(run)]) == EXIT_OK
    assert (run / "model.bin").exists() and (run / "curves.png").exists()
    final = _jsonl(run / "metrics.jsonl")[-1]
    assert final["split"] == "test"
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(run)]) == EXIT_OK
    rec = json.loads(capsys.readouterr().out.strip())
    for key in ("ap", "auc", "acc", "loss_task"):
        assert rec[key] == final[key]


def test_training_from_written_csv(tmp_path):
    assert main(["synth", "--synth", "thm2:horizon=120", "--out", str(tmp_path)]) == EXIT_OK
    run = tmp_path / "run"
    args = ["train", "--data", str(tmp_path / "thm2_T120.csv"), "--k", "1", "--epochs", "1", "--d-z", "4",
            "--out", str(run)]
    assert main(args) == EXIT_OK
    from_csv = _jsonl(run / "metrics.jsonl")
    assert main(["train", "--synth", "thm2:horizon=120", *args[3:-1], str(tmp_path / "run2")]) == EXIT_OK
    direct = _jsonl(tmp_path / "run2" / "metrics.jsonl")
    assert [_content(r) for r in from_csv] == [_content(r) for r in direct]


def test_metrics_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["train", *TRAIN, "--seed", "4", "--out", str(tmp_path / d)]) == EXIT_OK
    a, b = _jsonl(tmp_path / "a" / "metrics.jsonl"), _jsonl(tmp_path / "b" / "metrics.jsonl")
    assert [_content(r) for r in a] == [_content(r) for r in b]


def test_exit_codes(tmp_path):
    assert main([]) == EXIT_USAGE
    assert main(["train", "--strategy", "random"]) == EXIT_USAGE
    assert main(["train", "--epochs", "1"]) == EXIT_USAGE  # no dataset
    assert main(["train", *TRAIN, "--data", "x.csv"]) == EXIT_USAGE
    assert main(["train", *TRAIN, "--threads", "0"]) == EXIT_USAGE
    assert main(["train", "--data", str(tmp_path / "nope.csv")]) == EXIT_RUNTIME
    bad = tmp_path / "bad.csv"
    bad.write_text("src,dst,t\n0,1,nan\n")
    assert main(["train", "--data", str(bad)]) == EXIT_RUNTIME
    assert main(["bench", "--events", "10"]) == EXIT_RUNTIME


def test_missing_checkpoint_blob(tmp_path):
    run = tmp_path / "run"
    assert main(["train", *TRAIN, "--epochs", "1", "--out", str(run)]) == EXIT_OK
    (run / "model.bin").unlink()
    assert main(["eval", "--checkpoint", str(run)]) == EXIT_RUNTIME
    assert main(["eval", "--checkpoint", str(tmp_path / "elsewhere")]) == EXIT_RUNTIME


def test_config_file_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.txt"
    write_config({"k": 5, "lr": 0.01, "strategy": "uniform"}, cfg)
    assert read_config(cfg) == {"k": 5, "lr": 0.01, "strategy": "uniform"}
    monkeypatch.setenv("TGSAMPLE_SEED", "17")
    s = _settings(build_parser().parse_args(["train", "--config", str(cfg), "--k", "3"]))
    assert s["k"] == 3 and s["lr"] == 0.01 and s["strategy"] == "uniform" and s["seed"] == 17
    s = _settings(build_parser().parse_args(["train", "--seed", "2"]))
    assert s["seed"] == 2
    monkeypatch.setenv("TGSAMPLE_SEED", "x")
    assert main(["train", *TRAIN]) == EXIT_USAGE


def test_bad_config_line(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("k=2\nthis line is wrong\n")
    assert main(["train", "--config", str(cfg)]) == EXIT_USAGE
