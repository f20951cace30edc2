import json
import math

import pytest

from dnsp import cli
from dnsp.io import save_model
from dnsp.mcem import FittedModel
from dnsp.model import SequenceParams, n_hidden_architecture

CONFIG = {
    "seed": 3,
    "chain": {"burn_in": 100, "n_samples": 8, "thin": 5},
    "mcem": {"max_iters": 3},
    "eval": {"refit_rounds": 2},
    "predict": {"n_mc": 8},
}


@pytest.fixture
def workdir(tmp_path):
    arch = n_hidden_architecture(1, 2, (2.0, 2.0, 2.0))
    save_model(FittedModel(arch, SequenceParams((0.5,), {(1, 0): 0.2})), tmp_path / "truth.json")
    (tmp_path / "cfg.json").write_text(json.dumps(CONFIG))
    assert cli.main(["simulate", "--model", str(tmp_path / "truth.json"), "--n", "4", "--T", "8",
                     "--seed", "1", "--out", str(tmp_path / "data.jsonl")]) == 0
    return tmp_path


def run(workdir, *args):
    return cli.main([*args, "--config", str(workdir / "cfg.json")])


def test_simulate_zero_sequences(workdir):
    out = workdir / "empty.jsonl"
    assert cli.main(["simulate", "--model", str(workdir / "truth.json"), "--n", "0", "--out", str(out)]) == 0
    assert out.read_text() == ""


def test_simulate_deterministic_with_sidecar(workdir):
    a, b = workdir / "a.jsonl", workdir / "b.jsonl"
    for p in (a, b):
        assert cli.main(["simulate", "--model", str(workdir / "truth.json"), "--n", "5", "--T", "6", "--seed", "9",
                         "--out", str(p), "--sidecar", str(p) + ".hidden"]) == 0
    assert a.read_bytes() == b.read_bytes()
    hidden = [json.loads(x) for x in (workdir / "a.jsonl.hidden").read_text().splitlines()]
    assert len(hidden) == 5 and set(hidden[0]) == {"1,1"}


def test_train_eval_predict_deterministic(workdir):
    outs = []
    for tag in ("x", "y"):
        m = workdir / f"fit_{tag}.json"
        assert run(workdir, "train", "--data", str(workdir / "data.jsonl"), "--out", str(m)) == 0
        assert run(workdir, "eval", "--data", str(workdir / "data.jsonl"), "--model", str(m),
                   "--out", str(workdir / f"eval_{tag}.json")) == 0
        assert run(workdir, "predict", "--data", str(workdir / "data.jsonl"), "--model", str(m),
                   "--out", str(workdir / f"pred_{tag}.json")) == 0
        outs.append([(workdir / n).read_bytes() for n in
                     (f"fit_{tag}.json", f"fit_{tag}.json.trace.jsonl", f"eval_{tag}.json",
                      f"pred_{tag}.json", f"pred_{tag}.json.records.jsonl")])
    assert outs[0] == outs[1]
    metrics = json.loads(outs[0][3])
    assert set(metrics) == {"rmse", "accuracy", "n_predictions"}
    ev = json.loads(outs[0][2])
    assert math.isfinite(ev["loglik_per_event"]) and ev["n_events"] > 0
    assert len(outs[0][1].decode().splitlines()) >= 1


def test_threads_flag_does_not_change_results(workdir):
    outs = []
    for threads in ("1", "3"):
        p = workdir / f"t{threads}.json"
        assert run(workdir, "train", "--data", str(workdir / "data.jsonl"), "--out", str(p),
                   "--threads", threads) == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_seed_flag_overrides_config(workdir):
    a, b = workdir / "s1.json", workdir / "s2.json"
    run(workdir, "train", "--data", str(workdir / "data.jsonl"), "--out", str(a), "--seed", "1")
    run(workdir, "train", "--data", str(workdir / "data.jsonl"), "--out", str(b), "--seed", "2")
    assert (workdir / "s1.json.trace.jsonl").read_bytes() != (workdir / "s2.json.trace.jsonl").read_bytes()


def test_single_type_predict_accuracy_one(tmp_path):
    arch = n_hidden_architecture(1, 1, (1.5, 1.5, 1.0))
    save_model(FittedModel(arch, SequenceParams((0.5,), {(1, 0): 0.2})), tmp_path / "m.json")
    cli.main(["simulate", "--model", str(tmp_path / "m.json"), "--n", "2", "--T", "6", "--out",
              str(tmp_path / "d.jsonl"), "--seed", "4"])
    out = tmp_path / "p.json"
    assert cli.main(["predict", "--data", str(tmp_path / "d.jsonl"), "--model", str(tmp_path / "m.json"),
                     "--out", str(out)]) == 0
    assert json.loads(out.read_text())["accuracy"] == 1.0


def test_exit_code_schema_errors(workdir, capsys):
    (workdir / "bad.json").write_text('{"seed": 1, "bogus": 2}')
    assert cli.main(["train", "--data", str(workdir / "data.jsonl"), "--config", str(workdir / "bad.json")]) == 2
    (workdir / "bad.jsonl").write_text('{"T": 1, "events": [{"t": 2, "k": 1}]}\n')
    assert cli.main(["train", "--data", str(workdir / "bad.jsonl")]) == 2
    assert cli.main(["eval", "--data", str(workdir / "data.jsonl"), "--model", str(workdir / "missing.json")]) == 2
    (workdir / "empty.jsonl").write_text("")
    assert cli.main(["eval", "--data", str(workdir / "empty.jsonl"), "--model", str(workdir / "truth.json")]) == 2
    assert cli.main(["train", "--data", str(workdir / "data.jsonl"), "--threads", "0"]) == 2
    assert "dnsp:" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_code_divergence(workdir, monkeypatch, capsys):
    from dnsp import mcmc

    monkeypatch.setattr(mcmc.Chain, "real_loglik", lambda self: math.nan)
    assert run(workdir, "train", "--data", str(workdir / "data.jsonl"), "--out", str(workdir / "f.json")) == 3
    assert "diverged" in capsys.readouterr().err


def test_fully_connected_training(workdir):
    cfg = dict(CONFIG, model={"wiring": "fully-connected", "K": [2, 2, 1]})
    (workdir / "fc.json").write_text(json.dumps(cfg))
    out = workdir / "fc_model.json"
    assert cli.main(["train", "--data", str(workdir / "data.jsonl"), "--config", str(workdir / "fc.json"),
                     "--out", str(out)]) == 0
    assert json.loads(out.read_text())["architecture"]["K"] == [2, 2, 1]
    cfg["model"]["K"] = [3, 1]
    (workdir / "fc.json").write_text(json.dumps(cfg))
    assert cli.main(["train", "--data", str(workdir / "data.jsonl"), "--config", str(workdir / "fc.json")]) == 2
