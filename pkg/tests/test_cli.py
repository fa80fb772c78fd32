import json

import numpy as np
import pytest

from trajprune import container
from trajprune.cli import main
from trajprune.model import PruneMask, forward


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--arch", "vision", "--out-dir", str(d / "vis"),
                 "--seed", "3"]) == 0
    assert main(["synth", "--arch", "language", "--out-dir", str(d / "lang"),
                 "--seed", "4"]) == 0
    assert main(["synth", "--arch", "cnn", "--out-dir", str(d / "cnn"),
                 "--seed", "5"]) == 0
    return d


def test_score_deterministic_bytes(workdir, capsys):
    args = ["score", "--model", str(workdir / "vis/model.optn"),
            "--batch", str(workdir / "vis/batch.optn"), "--task", "vision",
            "--seed", "1"]
    code1, out1, _ = run(capsys, *args)
    code2, out2, _ = run(capsys, *args)
    assert code1 == code2 == 0
    assert out1 == out2
    table = json.loads(out1)
    assert table["schema"] == "importance-table/1"


def test_search_identity_at_full_budget(workdir, capsys, tmp_path):
    table = tmp_path / "table.json"
    assert run(capsys, "score", "--model", str(workdir / "vis/model.optn"),
               "--batch", str(workdir / "vis/batch.optn"), "--task", "vision",
               "--out", str(table))[0] == 0
    rep = tmp_path / "rep.json"
    code, out, _ = run(capsys, "search", "--model", str(workdir / "vis/model.optn"),
                       "--batch", str(workdir / "vis/batch.optn"),
                       "--table", str(table), "--keep-ratio", "1.0",
                       "--report", str(rep))
    assert code == 0
    mask = json.loads(out)
    assert mask["schema"] == "prune-mask/1"
    assert all(len(h) == 4 for h in mask["heads"])
    report = json.loads(rep.read_text())
    assert report["achieved_ratio"] == 1.0


def test_search_and_prune_roundtrip(workdir, capsys, tmp_path):
    model_path = str(workdir / "vis/model.optn")
    batch_path = str(workdir / "vis/batch.optn")
    table = tmp_path / "table.json"
    mask_file = tmp_path / "mask.json"
    pruned = tmp_path / "pruned.optn"
    run(capsys, "score", "--model", model_path, "--batch", batch_path,
        "--task", "vision", "--out", str(table))
    code, out, _ = run(capsys, "search", "--model", model_path,
                       "--batch", batch_path, "--table", str(table),
                       "--keep-ratio", "0.6", "--out", str(mask_file))
    assert code == 0
    code, _, _ = run(capsys, "prune", "--model", model_path,
                     "--mask", str(mask_file), "--out", str(pruned))
    assert code == 0

    base = container.load_container(model_path)
    batch = container.load_batch(batch_path)
    md = json.loads(mask_file.read_text())
    mask = PruneMask(heads=md["heads"], neurons=md["neurons"])
    masked_trace = forward(base, batch, mask)
    baked = container.load_container(str(pruned))
    baked_trace = forward(baked, batch)
    assert np.abs(masked_trace.logits - baked_trace.logits).max() <= 1e-6


def test_schedule_tau_modes(workdir, capsys, tmp_path):
    model_path = str(workdir / "vis/model.optn")
    batch_path = str(workdir / "vis/batch.optn")
    table = tmp_path / "table.json"
    run(capsys, "score", "--model", model_path, "--batch", batch_path,
        "--task", "vision", "--with-tokens", "--out", str(table))
    for mode in ("tau", "tau-inf"):
        rep = tmp_path / f"rep-{mode}.json"
        mask_file = tmp_path / f"mask-{mode}.json"
        code, out, _ = run(capsys, "schedule", "--model", model_path,
                           "--batch", batch_path, "--table", str(table),
                           "--keep-ratio", "0.6", "--mode", mode,
                           "--out", str(mask_file), "--report", str(rep))
        assert code == 0
        mask = json.loads(mask_file.read_text())
        counts = mask["token_counts"]
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        report = json.loads(rep.read_text())
        assert report["achieved_ratio"] <= 0.6
        # a scheduled mask evaluates end to end
        code, out, _ = run(capsys, "eval", "--model", model_path,
                           "--batch", batch_path, "--mask", str(mask_file))
        assert code == 0
        assert json.loads(out)["flops_ratio"] <= 0.6


def test_schedule_tau_tight_budget_two_blocks(workdir, capsys, tmp_path):
    # Token removal cannot shrink block 0, so on a 2-block model at keep 0.5
    # the default head ratio must auto-tighten instead of erroring.
    model_path = str(workdir / "vis/model.optn")
    batch_path = str(workdir / "vis/batch.optn")
    table = tmp_path / "table.json"
    run(capsys, "score", "--model", model_path, "--batch", batch_path,
        "--task", "vision", "--with-tokens", "--out", str(table))
    rep = tmp_path / "rep.json"
    code, out, err = run(capsys, "schedule", "--model", model_path,
                         "--batch", batch_path, "--table", str(table),
                         "--keep-ratio", "0.5", "--mode", "tau",
                         "--report", str(rep))
    assert code == 0, err
    assert json.loads(rep.read_text())["achieved_ratio"] <= 0.5
    # an explicit head ratio that strands the schedule is a strict error
    code, _, err = run(capsys, "schedule", "--model", model_path,
                       "--batch", batch_path, "--table", str(table),
                       "--keep-ratio", "0.5", "--head-keep-ratio", "0.95",
                       "--mode", "tau")
    assert code == 1
    assert json.loads(err)["error"] == "budget_unreachable"


def test_schedule_requires_token_scores(workdir, capsys, tmp_path):
    table = tmp_path / "table.json"
    run(capsys, "score", "--model", str(workdir / "vis/model.optn"),
        "--batch", str(workdir / "vis/batch.optn"), "--task", "vision",
        "--out", str(table))
    code, _, err = run(capsys, "schedule", "--model", str(workdir / "vis/model.optn"),
                       "--batch", str(workdir / "vis/batch.optn"),
                       "--table", str(table), "--keep-ratio", "0.6")
    assert code == 1
    assert json.loads(err)["error"] == "bad_parameter"


def test_eval_with_random_baselines(workdir, capsys, tmp_path):
    model_path = str(workdir / "vis/model.optn")
    batch_path = str(workdir / "vis/batch.optn")
    table = tmp_path / "table.json"
    mask_file = tmp_path / "mask.json"
    run(capsys, "score", "--model", model_path, "--batch", batch_path,
        "--task", "vision", "--out", str(table))
    run(capsys, "search", "--model", model_path, "--batch", batch_path,
        "--table", str(table), "--keep-ratio", "0.6", "--out", str(mask_file))
    code, out, _ = run(capsys, "eval", "--model", model_path,
                       "--batch", batch_path, "--mask", str(mask_file),
                       "--random-masks", "5", "--seed", "9")
    assert code == 0
    rep = json.loads(out)
    assert rep["flops_ratio"] <= 0.6
    assert 0.0 <= rep["agreement"] <= 1.0
    assert rep["random_baseline"]["n"] == 5


@pytest.mark.parametrize("mode", ["beta", "tau-inf"])
def test_report_csv(workdir, capsys, tmp_path, mode):
    out_csv = tmp_path / "sweep.csv"
    code, _, _ = run(capsys, "report", "--model", str(workdir / "vis/model.optn"),
                     "--batch", str(workdir / "vis/batch.optn"),
                     "--task", "vision", "--budgets", "0.6,0.8",
                     "--mode", mode, "--out", str(out_csv))
    assert code == 0
    lines = out_csv.read_text().strip().splitlines()
    assert lines[0] == "budget_ratio,achieved_ratio,agreement,logit_kl,cum_importance"
    assert len(lines) == 3
    for line in lines[1:]:
        budget, achieved = map(float, line.split(",")[:2])
        assert achieved <= budget


def test_language_flow(workdir, capsys, tmp_path):
    model_path = str(workdir / "lang/model.optn")
    batch_path = str(workdir / "lang/batch.optn")
    table = tmp_path / "table.json"
    mask_file = tmp_path / "mask.json"
    assert run(capsys, "score", "--model", model_path, "--batch", batch_path,
               "--out", str(table))[0] == 0
    assert run(capsys, "search", "--model", model_path, "--batch", batch_path,
               "--table", str(table), "--keep-ratio", "0.7",
               "--out", str(mask_file))[0] == 0
    code, out, _ = run(capsys, "eval", "--model", model_path,
                       "--batch", batch_path, "--mask", str(mask_file))
    assert code == 0
    assert json.loads(out)["flops_ratio"] <= 0.7


def test_cnn_flow(workdir, capsys, tmp_path):
    model_path = str(workdir / "cnn/model.optn")
    batch_path = str(workdir / "cnn/batch.optn")
    table = tmp_path / "table.json"
    mask_file = tmp_path / "mask.json"
    pruned = tmp_path / "pruned.optn"
    assert run(capsys, "score", "--model", model_path, "--batch", batch_path,
               "--task", "vision", "--out", str(table))[0] == 0
    scores = json.loads(table.read_text())
    assert "channel_scores" in scores
    assert run(capsys, "search", "--model", model_path, "--batch", batch_path,
               "--table", str(table), "--keep-ratio", "0.6",
               "--out", str(mask_file))[0] == 0
    code, out, _ = run(capsys, "eval", "--model", model_path,
                       "--batch", batch_path, "--mask", str(mask_file))
    assert code == 0
    assert json.loads(out)["flops_ratio"] <= 0.6
    assert run(capsys, "prune", "--model", model_path, "--mask", str(mask_file),
               "--out", str(pruned))[0] == 0
    assert container.load_container(str(pruned)) is not None


def test_error_json_on_stderr(capsys, tmp_path):
    bogus = tmp_path / "nope.optn"
    bogus.write_bytes(b"JUNKJUNKJUNKJUNKJUNK")
    code, _, err = run(capsys, "score", "--model", str(bogus),
                       "--batch", str(bogus))
    assert code == 1
    payload = json.loads(err)
    assert payload["error"] == "bad_magic"


def test_runconfig_file_defaults(workdir, capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sweep config\ntemperature=2.0\nlambda=0.5\ntask=vision\n")
    code, out, _ = run(capsys, "--config", str(cfg), "score",
                       "--model", str(workdir / "vis/model.optn"),
                       "--batch", str(workdir / "vis/batch.optn"))
    assert code == 0
    base = json.loads(out)
    # flag overrides config
    code, out2, _ = run(capsys, "--config", str(cfg), "score",
                        "--model", str(workdir / "vis/model.optn"),
                        "--batch", str(workdir / "vis/batch.optn"),
                        "--temperature", "2.0", "--lambda", "0.5",
                        "--task", "vision")
    assert out2 == out
    code, out3, _ = run(capsys, "score",
                        "--model", str(workdir / "vis/model.optn"),
                        "--batch", str(workdir / "vis/batch.optn"),
                        "--task", "vision")
    assert out3 != out  # different temperature/lambda changes scores
