import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dyskernel import autodiff as ad
from dyskernel import training
from dyskernel.cli import UsageError, bench_rows, main, parse_argv
from dyskernel.config import ConfigError, RunConfig, emit_config, load_config, parse_config, resolve_config
from dyskernel.data import read_pgm, synthetic_pair, write_pgm
from dyskernel.params import load_container
from dyskernel.training import build_model, evaluate_pair, loss_config, synthetic_stream, train


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def support_mean(field, pair):
    """Mean displacement where the image has structure; background flow is unidentifiable."""
    mask = (pair.seg_a[0, 0] > 0) | (pair.x_a[0, 0] > 0.05)
    return field[0][:, mask].mean(axis=1)


@pytest.fixture(scope="module")
def translate_checkpoint(tmp_path_factory):
    root = tmp_path_factory.mktemp("translate")
    ck = root / "ck.dysk"
    code = main(["train", "--seed", "0", "--pair-kind", "translate", "--lr", "0.003", "--steps", "600",
                 "--out-dir", str(root / "out"), "--checkpoint", str(ck)])
    assert code == 0
    return ck


# config

def test_config_round_trip():
    cfg = RunConfig(seed=7, lr=3e-4, betas=(0.8, 0.95), window="cross-5", kernel_sizes=(3, 9))
    assert RunConfig(**parse_config(emit_config(cfg))) == cfg


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-8, 1.0), st.floats(0, 10), st.integers(0, 2**63 - 1) | st.none())
def test_config_round_trip_property(lr, lam, seed):
    cfg = RunConfig(lr=lr, lambda_smooth=lam, seed=seed)
    assert RunConfig(**parse_config(emit_config(cfg))) == cfg


def test_config_file_syntax(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# comment\nsteps = 5  # trailing\nncc-window = 7\n\n")
    cfg = load_config(path)
    assert (cfg.steps, cfg.ncc_window) == (5, 7)
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("colour = red")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("steps 5")
    with pytest.raises(ConfigError):
        parse_config("steps = many")


def test_seed_precedence(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("seed = 1\n")
    assert resolve_config(path, env={}).seed == 1
    assert resolve_config(path, env={"DYSK_SEED": "2"}).seed == 2
    assert resolve_config(path, {"seed": "3"}, env={"DYSK_SEED": "2"}).seed == 3


def test_validation():
    with pytest.raises(ConfigError, match="seed"):
        RunConfig(task="train").validate()
    RunConfig(task="bench").validate()
    with pytest.raises(ConfigError):
        RunConfig(seed=0, heads=3).validate()
    with pytest.raises(ConfigError):
        RunConfig(seed=0, window="blob").validate()


def test_parse_argv():
    assert parse_argv(["bench", "--k", "1", "--config=c.txt"]) == ("bench", "c.txt", {"k": "1"})
    for bad in ([], ["fly"], ["bench", "stray"], ["bench", "--steps"]):
        with pytest.raises(UsageError):
            parse_argv(bad)


# exit codes

def test_exit_codes(tmp_path, monkeypatch):
    monkeypatch.delenv("DYSK_SEED", raising=False)
    assert main(["fly"]) == 1
    assert main(["train"]) == 1  # no seed
    assert main(["train", "--seed", "0", "--lr", "-1"]) == 1
    assert main(["train", "--seed", "0", "--bogus", "1"]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.txt")]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["analyze-complexity", "--out-dir", str(blocker / "sub")]) == 2
    assert main(["eval", "--seed", "0", "--checkpoint", str(tmp_path / "none.dysk")]) == 2


def test_non_finite_loss_aborts(tmp_path, monkeypatch):
    real = training.bidirectional_loss

    def poisoned(*args, **kw):
        return tuple(ad.mul(t, np.nan) for t in real(*args, **kw))

    monkeypatch.setattr(training, "bidirectional_loss", poisoned)
    out = tmp_path / "out"
    code = main(["train", "--seed", "0", "--steps", "3", "--out-dir", str(out),
                 "--checkpoint", str(tmp_path / "ck.dysk")])
    assert code == 2
    rows = read_csv(out / "train_log.csv")
    assert rows[0] == ["step", "loss", "sim", "smooth"] and rows[1][0] == "0" and len(rows) == 2


# train

def test_zero_steps(tmp_path):
    ck = tmp_path / "ck.dysk"
    assert main(["train", "--seed", "4", "--steps", "0", "--out-dir", str(tmp_path), "--checkpoint", str(ck)]) == 0
    assert read_csv(tmp_path / "train_log.csv") == [["step", "loss", "sim", "smooth"]]
    init = build_model(RunConfig(seed=4)).params.state_dict()
    saved = load_container(ck)
    assert list(saved) == list(init)
    assert all(saved[k].tobytes() == init[k].tobytes() for k in init)
    assert load_config(tmp_path / "config.txt").seed == 4


def test_training_is_deterministic(tmp_path):
    logs = []
    for run in ("a", "b"):
        out = tmp_path / run
        main(["train", "--seed", "5", "--steps", "4", "--size", "16", "--out-dir", str(out),
              "--checkpoint", str(out / "ck.dysk")])
        logs.append((out / "train_log.csv").read_bytes())
    assert logs[0] == logs[1]


def test_translate_training_lowers_loss():
    # each step sees a fresh pair, so compare on a fixed held-out set
    cfg = RunConfig(seed=0, pair_kind="translate").validate()
    held = list(synthetic_stream(cfg, "eval", 5))
    lcfg = loss_config(cfg)
    before = np.mean([evaluate_pair(build_model(cfg), p, lcfg)["loss"] for p in held])
    model = train(cfg)
    after = np.mean([evaluate_pair(model, p, lcfg)["loss"] for p in held])
    assert after < before


# register

def test_register_identical_inputs(tmp_path):
    ck = tmp_path / "ck.dysk"
    main(["train", "--seed", "0", "--steps", "0", "--out-dir", str(tmp_path), "--checkpoint", str(ck)])
    x = synthetic_pair("elastic", (32, 32), seed=3).x_a[0, 0]
    x = np.round(x * 65535) / 65535
    write_pgm(tmp_path / "a.pgm", x, bits=16)
    assert main(["register", "--x-a", str(tmp_path / "a.pgm"), "--x-b", str(tmp_path / "a.pgm"),
                 "--checkpoint", str(ck), "--out-dir", str(tmp_path / "r")]) == 0
    for name in ("phi_a2b", "phi_b2a"):
        phi = load_container(tmp_path / "r" / f"{name}.dysk")["phi"]
        assert phi.shape == (1, 2, 32, 32) and np.all(phi == 0)
    np.testing.assert_array_equal(read_pgm(tmp_path / "r" / "x_a2b.pgm"), read_pgm(tmp_path / "a.pgm"))


def test_register_rejections(tmp_path, translate_checkpoint):
    write_pgm(tmp_path / "a.pgm", np.zeros((32, 32)))
    write_pgm(tmp_path / "b.pgm", np.zeros((32, 28)))
    args = ["register", "--checkpoint", str(translate_checkpoint), "--out-dir", str(tmp_path)]
    assert main(args + ["--x-a", str(tmp_path / "a.pgm"), "--x-b", str(tmp_path / "b.pgm")]) == 1
    assert main(args + ["--x-a", str(tmp_path / "a.pgm")]) == 1
    # checkpoint built for a different width
    assert main(args + ["--channels", "8", "--heads", "2", "--x-a", str(tmp_path / "a.pgm"),
                        "--x-b", str(tmp_path / "a.pgm")]) == 1


def test_register_recovers_translation(tmp_path, translate_checkpoint):
    pair = synthetic_pair("translate", (32, 32), seed=12345, shift=(2.0, 0.0))
    write_pgm(tmp_path / "a.pgm", pair.x_a[0, 0], bits=16)
    write_pgm(tmp_path / "b.pgm", pair.x_b[0, 0], bits=16)
    assert main(["register", "--x-a", str(tmp_path / "a.pgm"), "--x-b", str(tmp_path / "b.pgm"),
                 "--checkpoint", str(translate_checkpoint), "--out-dir", str(tmp_path)]) == 0
    phi = load_container(tmp_path / "phi_a2b.dysk")["phi"]
    err = np.abs(support_mean(phi, pair) - support_mean(pair.phi_true, pair))
    assert err.max() < 0.5, err


# eval

def test_untrained_eval_equals_initial_and_repeats(tmp_path):
    ck = tmp_path / "ck.dysk"
    main(["train", "--seed", "0", "--steps", "0", "--out-dir", str(tmp_path), "--checkpoint", str(ck)])
    outputs = []
    for run in ("e1", "e2"):
        assert main(["eval", "--seed", "0", "--pairs", "5", "--checkpoint", str(ck),
                     "--out-dir", str(tmp_path / run)]) == 0
        outputs.append((tmp_path / run / "eval.csv").read_bytes())
    assert outputs[0] == outputs[1]
    summary = dict(line.split(" ", 1) for line in (tmp_path / "e1" / "eval_summary.txt").read_text().splitlines())
    assert summary["dsc"] == summary["dsc_initial"]
    assert summary["pairs"] == "5"
    header = read_csv(tmp_path / "e1" / "eval.csv")[0]
    assert header == ["pair_id", "dsc_mean", "dsc_1", "dsc_2", "dsc_3", "jac_neg_pct", "loss"]


def test_trained_eval_beats_initial(tmp_path):
    cfg = RunConfig(seed=0, lr=3e-3).validate()
    model = train(cfg)
    rows = training.evaluate(model, [(str(i), p) for i, p in enumerate(synthetic_stream(cfg, "eval", 50))], cfg)
    dsc = np.mean([m["dsc_mean"] for _, m in rows])
    initial = np.mean([m["dsc_initial"] for _, m in rows])
    assert dsc > initial


def test_eval_pair_dir_skips_unlabelled(tmp_path, caplog):
    pair = synthetic_pair("elastic", (32, 32), seed=1)
    for pid in ("p0", "p1"):
        write_pgm(tmp_path / f"{pid}_a.pgm", pair.x_a[0, 0])
        write_pgm(tmp_path / f"{pid}_b.pgm", pair.x_b[0, 0])
    for side, seg in (("a", pair.seg_a), ("b", pair.seg_b)):
        write_pgm(tmp_path / f"p0_{side}_seg.pgm", seg[0, 0] / 255.0)
    pairs = training.load_pair_dir(tmp_path)
    assert [pid for pid, _ in pairs] == ["p0", "p1"]
    assert np.array_equal(pairs[0][1].seg_a, pair.seg_a)
    rows = training.evaluate(build_model(RunConfig(seed=0)), pairs, RunConfig(seed=0))
    assert [pid for pid, _ in rows] == ["p0"]
    assert "p1" in caplog.text


def test_mean_std_format():
    assert training.mean_std([1.0, 3.0]) == "2.0±1.0"
    assert training.mean_std([0.004, 0.006], digits=2) == "0.01±0.00"


# gradcheck, complexity, bench

def test_gradcheck_command(capsys, monkeypatch):
    assert main(["gradcheck"]) == 0
    assert "end-to-end" in capsys.readouterr().out
    monkeypatch.setattr(ad.Exp, "backward", staticmethod(lambda ctx, g: (2 * g * ctx.out,)))
    assert main(["gradcheck"]) == 2


def test_analyze_complexity_csv(tmp_path):
    assert main(["analyze-complexity", "--n-max", "64", "--labels", "4", "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "complexity.csv")
    assert rows[0] == ["N", "log10_H", "log10_C", "R"]
    assert rows[1][0] == "2" and rows[-1][0] == "64"


def test_bench_scaling(tmp_path):
    cfg = RunConfig(task="bench")
    rows = bench_rows(cfg)
    assert [r[:2] for r in rows] == [(3, 9), (5, 25), (7, 49)]
    flops = [r[2] for r in rows]
    assert flops[0] < flops[1] < flops[2]
    C, T = cfg.channels, cfg.depth
    for (_, u1, _, p1, _), (_, u2, _, p2, _) in zip(rows, rows[1:]):
        # offset-head output layer: 3×3 conv C -> 2|U| with bias, once per block
        assert p2 - p1 == T * (9 * C + 1) * 2 * (u2 - u1)
    assert [r[2:4] for r in bench_rows(cfg)] == [r[2:4] for r in rows]
    assert main(["bench", "--out-dir", str(tmp_path)]) == 0
    assert read_csv(tmp_path / "bench.csv")[0] == ["k", "|U|", "flops", "params", "wall_ms"]
