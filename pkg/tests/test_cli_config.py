import io

import numpy as np
import pytest

from nimzero.agent import PolicyValueNet
from nimzero.cli import main
from nimzero.config import ConfigError, dump_config, load_config
from nimzero.selfplay import checkpoint_path, read_metrics


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out)
    return code, out.getvalue()


def test_defaults():
    cfg = load_config()
    t = cfg.resolved_train()
    assert (t.dirichlet_alpha, t.dirichlet_epsilon, t.c1, t.c2, t.batch_size) == (0.35, 0.25, 0.25, 19652.0, 128)
    assert t.board == (1, 3, 5, 7, 9) and t.simulations == 50


def test_file_then_flags(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nboard = 1,3,5,7,9,11\nseed = 4\n[search]\nalpha = 0.5 ; comment\n"
                    "[train]\nlr = 0.01\n[supervised]\nsteps = 1e5\n")
    cfg = load_config(path, {"alpha": 0.2, "sims": None})
    t = cfg.resolved_train()
    assert t.board == (1, 3, 5, 7, 9, 11) and t.simulations == 60 and t.seed == 4
    assert t.dirichlet_alpha == 0.2 and t.learning_rate == 0.01
    assert cfg.resolved_supervised().steps == 100000
    assert load_config(path, {"lr": 0.5}).supervised.learning_rate == 0.5


def test_round_trip(tmp_path):
    cfg = load_config(None, {"board": (2, 2), "sims": 9, "seed": 7})
    path = tmp_path / "c.ini"
    path.write_text(dump_config(cfg))
    again = load_config(path)
    assert again.resolved_train() == cfg.resolved_train()
    assert again.resolved_supervised() == cfg.resolved_supervised()


@pytest.mark.parametrize("text,where", [
    ("[search]\nalpha = 0\n", None),
    ("[search]\nalpha = abc\n", ":2"),
    ("[train]\nbogus = 1\n", ":2"),
    ("[run]\n\nboard = 1,,2\n", ":3"),
    ("no section\n", None),
])
def test_bad_files(tmp_path, text, where):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError) as err:
        load_config(path)
    if where:
        assert f"bad.ini{where}" in str(err.value)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_oracle_command():
    code, text = run("oracle", "--board", "1,3,5,7,9", "--position", "1,3,5,7,9")
    assert code == 0 and text.strip() == "nim-sum 9, WON, winning moves: e9"
    code, text = run("oracle", "--board", "1,2,3")
    assert text.strip() == "nim-sum 0, LOST, winning moves: none"


def test_usage_errors(capsys):
    assert run("frobnicate")[0] == 2
    assert run("oracle", "--board", "1,,3")[0] == 2
    assert run("oracle", "--board", "1,3", "--position", "2,0")[0] == 2
    assert run("play", "--checkpoint", "oracle")[0] == 2
    assert run("evaluate", "--checkpoint", "/nonexistent.nimz")[0] == 1
    assert run("elo", "--run", "/nonexistent")[0] == 1


def test_train_zero_iterations(tmp_path):
    out = tmp_path / "r"
    code, _ = run("train", "--board", "1,3,5,7,9", "--iterations", "0", "--out", str(out))
    assert code == 0
    assert checkpoint_path(out, 0).exists()
    assert read_metrics(out / "metrics.csv") == []
    assert load_config(out / "config.ini").resolved_train().iterations == 0


def test_train_evaluate_elo_analyze(tmp_path):
    out = tmp_path / "r"
    code, text = run("train", "--board", "1,2,3", "--iterations", "2", "--episodes", "4",
                     "--sims", "8", "--workers", "1", "--out", str(out))
    assert code == 0 and "iter    2" in text
    ckpt = str(checkpoint_path(out, 2))
    code, text = run("evaluate", "--checkpoint", ckpt, "--games", "4", "--sims", "8",
                     "--out", str(out))
    assert code == 0 and "value sign accuracy" in text and "expert" in text
    assert (out / "evaluate.csv").read_text().count("\n") == 2
    code, text = run("elo", "--run", str(out))
    assert code == 0 and text.startswith("index,iteration,rating,matches_played")
    code, replayed = run("elo", "--run", str(out), "--replay", "--sims", "8")
    assert code == 0 and len(replayed.splitlines()) == 4
    code, text = run("analyze", "--checkpoint", ckpt, "--sims", "8,16")
    assert code == 0 and "win prob" in text and "V-value" in text
    with open(ckpt, "r+b") as fh:
        fh.write(b"JUNK")
    assert run("analyze", "--checkpoint", ckpt)[0] == 1


def test_analyze_and_play_with_stub():
    code, text = run("analyze", "--board", "1,3,5,7,9", "--checkpoint", "oracle", "--sims", "64,256")
    assert code == 0
    first_row = text.splitlines()[2].split()
    assert first_row[:3] == ["e9", "yes", "100.0%"]
    code, text = run("play", "--board", "1,3,5", "--checkpoint", "oracle", "--games", "10",
                     "--sims", "20")
    assert code == 0 and "vs perfect: 1.0000" in text
    code, text = run("play", "--board", "1,3,5", "--checkpoint", "random", "--games", "10",
                     "--opponent", "perfect")
    assert code == 0 and "vs perfect" in text


def test_supervised_commands(tmp_path):
    code, text = run("parity", "--length", "3", "--steps", "20", "--eval-every", "10",
                     "--eval-samples", "100", "--out", str(tmp_path / "p"))
    assert code == 0 and (tmp_path / "p" / "parity_n3_seed0.csv").exists()
    assert "length 1000: accuracy" in text
    code, text = run("nimsum-policy", "--heaps", "3", "--steps", "10", "--eval-every", "5",
                     "--eval-samples", "90", "--out", str(tmp_path / "n"))
    assert code == 0 and "final test accuracy" in text
    assert run("parity", "--length", "0", "--steps", "1")[0] == 2


def test_checkpoint_board_mismatch(tmp_path):
    path = tmp_path / "x.nimz"
    PolicyValueNet((1, 2), 4, rng=np.random.default_rng(0)).save(path)
    assert run("evaluate", "--checkpoint", str(path), "--board", "1,3")[0] == 1
