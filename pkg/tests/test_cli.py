import json
import subprocess
import sys
from pathlib import Path

import pytest

from fakelab.cli import build_parser, main
from fakelab.metrics import EvalReport
from fakelab.train import TrainConfig


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def dataset(workdir):
    path = workdir / "data.jsonl"
    rc = main(["synth", "--seed", "11", "--real", "6", "--fake", "6",
               "--difficulty", "0.0", "--out", str(path)])
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def train_config(workdir):
    path = workdir / "train.json"
    cfg = TrainConfig(steps=3, batch_size=4)
    path.write_text(cfg.to_json(), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def checkpoint(workdir, dataset, train_config):
    path = workdir / "model.ckpt"
    rc = main(["train", "--dataset", str(dataset), "--config", str(train_config),
               "--out", str(path)])
    assert rc == 0
    return path


def test_synth_is_byte_deterministic(workdir, dataset):
    again = workdir / "data2.jsonl"
    rc = main(["synth", "--seed", "11", "--real", "6", "--fake", "6",
               "--difficulty", "0.0", "--out", str(again)])
    assert rc == 0
    assert again.read_bytes() == dataset.read_bytes()


def test_synth_seed_changes_output(workdir, dataset):
    other = workdir / "data_other.jsonl"
    main(["synth", "--seed", "12", "--real", "6", "--fake", "6",
          "--difficulty", "0.0", "--out", str(other)])
    assert other.read_bytes() != dataset.read_bytes()


def test_validate_clean_dataset(dataset, capsys):
    assert main(["validate", "--dataset", str(dataset)]) == 0
    out = capsys.readouterr().out
    assert "0 problems" in out


def test_validate_reports_broken_annotation(workdir, dataset, capsys):
    lines = dataset.read_text(encoding="utf-8").splitlines()
    record = json.loads(lines[0])
    record["annotation"] = record["annotation"].replace("<CONCLUSION>", "", 1)
    lines[0] = json.dumps(record, sort_keys=True)
    broken = workdir / "broken.jsonl"
    broken.write_text("\n".join(lines) + "\n", encoding="utf-8")

    assert main(["validate", "--dataset", str(broken)]) == 1
    out = capsys.readouterr().out
    assert record["id"] in out


def test_stats_prints_counts(dataset, capsys):
    assert main(["stats", "--dataset", str(dataset)]) == 0
    out = capsys.readouterr().out
    assert "samples: 12" in out
    assert "real: 6" in out
    assert "fake: 6" in out


def test_train_writes_checkpoint_and_trace(checkpoint):
    assert checkpoint.exists()
    trace = checkpoint.with_suffix(".trace.csv")
    body = trace.read_text(encoding="utf-8").splitlines()
    assert body[0] == "step,lm_loss,ce_loss,total"
    assert len(body) == 1 + 3


def test_eval_prints_table_and_writes_report(workdir, dataset, checkpoint, capsys):
    report_path = workdir / "report.json"
    rc = main(["eval", "--checkpoint", str(checkpoint), "--dataset", str(dataset),
               "--out", str(report_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "accuracy" in out
    payload = json.loads(report_path.read_text(encoding="utf-8"))
    assert payload["sample_count"] == 12


def test_eval_greedy_rounds_are_consistent(dataset, checkpoint, capsys):
    rc = main(["eval", "--checkpoint", str(checkpoint), "--dataset", str(dataset),
               "--rounds", "2", "--temperature", "0.0"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "inconsistency" in out
    assert "0.00" in out


def test_infer_prints_verdicts(dataset, checkpoint, capsys):
    rc = main(["infer", "--checkpoint", str(checkpoint), "--dataset", str(dataset)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "text verdict:" in out
    assert "head verdict:" in out
    assert "p_fake:" in out


def test_infer_by_id(dataset, checkpoint, capsys):
    first = json.loads(dataset.read_text(encoding="utf-8").splitlines()[3])
    rc = main(["infer", "--checkpoint", str(checkpoint), "--dataset", str(dataset),
               "--id", first["id"]])
    assert rc == 0
    assert first["id"] in capsys.readouterr().out


def test_infer_unknown_id_fails(dataset, checkpoint, capsys):
    rc = main(["infer", "--checkpoint", str(checkpoint), "--dataset", str(dataset),
               "--id", "no-such-sample"])
    assert rc == 1
    assert "no-such-sample" in capsys.readouterr().err


def test_eval_missing_checkpoint_fails(dataset, capsys):
    rc = main(["eval", "--checkpoint", "/nonexistent/x.ckpt",
               "--dataset", str(dataset)])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_grad_check_passes_and_fails_on_tolerance(monkeypatch, capsys):
    import fakelab.cli as cli

    monkeypatch.setattr(cli, "gradient_suite", lambda: {"a": 1e-9, "b": 2e-8})
    assert main(["grad-check"]) == 0
    assert "ok" in capsys.readouterr().out

    monkeypatch.setattr(cli, "gradient_suite", lambda: {"a": 1e-9, "b": 3e-3})
    assert main(["grad-check"]) == 1
    assert "FAIL" in capsys.readouterr().out


def _fake_report(acc, bleu):
    return EvalReport(
        sample_count=4, accuracy_percent={"real": acc, "fake": acc},
        average_accuracy_percent=acc,
        fail_rate_percent=0.0, bleu1=bleu, rouge_l=bleu, css=bleu,
        head_accuracy_percent=acc, head_agreement_percent=100.0, extras={},
    )


def test_ablate_summarises_arms(monkeypatch, workdir, capsys):
    import fakelab.cli as cli

    def fake_run_paired(base, arms, seeds, make_data, vocab=None):
        return {arm: {s: _fake_report(90.0 + i, 0.5) for s in seeds}
                for i, arm in enumerate(arms)}

    monkeypatch.setattr(cli, "run_paired", fake_run_paired)
    out_path = workdir / "ablate.json"
    rc = main(["ablate", "--seeds", "1,2", "--out", str(out_path)])
    assert rc == 0
    text = capsys.readouterr().out
    for arm in ("joint", "lm_only", "cross_attention", "binary_answer"):
        assert arm in text
    payload = json.loads(out_path.read_text(encoding="utf-8"))
    assert payload["joint"]["mean_accuracy"] == pytest.approx(90.0)
    assert set(payload["joint"]["per_seed"]) == {"1", "2"}


def test_usage_errors_exit_2():
    for argv in ([], ["frobnicate"], ["synth", "--seed", "1"],
                 ["validate", "--dataset", "x", "--bogus"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2


def test_parser_lists_all_subcommands():
    text = build_parser().format_help()
    for name in ("synth", "validate", "stats", "train", "eval", "infer",
                 "ablate", "grad-check"):
        assert name in text


def test_module_entry_point(workdir):
    out = workdir / "smoke.jsonl"
    proc = subprocess.run(
        [sys.executable, "-m", "fakelab.cli", "synth", "--seed", "3",
         "--real", "1", "--fake", "1", "--out", str(out)],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
