"""``nimzero`` command line.

Exit codes: 0 on success, 2 for usage, board or configuration errors, 1 for
I/O and checkpoint errors.
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from nimzero import seeding
from nimzero.agent import OracleStubNet, PolicyValueNet, TableEvaluator, UniformNet
from nimzero.config import ConfigError, RunConfig, load_config, write_config
from nimzero.evaluation import (
    EloPool,
    RatedAgent,
    SearchPlayer,
    accuracy_report,
    analyze_position,
    champion_test,
    evaluation_positions,
    expert_test,
    random_player,
    tournament_round,
)
from nimzero.game import NimBoard, format_heaps, parse_heaps
from nimzero.mcts import SearchConfig
from nimzero.nn.checkpoint import CheckpointError, read_checkpoint
from nimzero.oracle import nim_sum, winning_moves
from nimzero.parity_lab import train_nimsum_policy, train_parity
from nimzero.selfplay import full_training_loop


class UsageError(Exception):
    pass


def _heaps_arg(text: str) -> tuple[int, ...]:
    try:
        heaps = parse_heaps(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return heaps


def _ladder_arg(text: str) -> tuple[int, ...]:
    try:
        ladder = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed simulation list: {text!r}") from None
    if not ladder or min(ladder) < 1:
        raise argparse.ArgumentTypeError("simulation counts must be positive")
    return ladder


def _common(p: argparse.ArgumentParser, *, board=True, train=False, search=False):
    p.add_argument("--config", help="INI file with [run]/[search]/[train]/[supervised] sections")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: $NIMZERO_OUT or ./runs)")
    if board:
        p.add_argument("--board", type=_heaps_arg, help='heap capacities, e.g. "1,3,5,7,9"')
    if search or train:
        p.add_argument("--alpha", type=float)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--c1", type=float)
        p.add_argument("--c2", type=float)
    if train:
        p.add_argument("--iterations", type=int)
        p.add_argument("--episodes", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--sims", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nimzero", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("train", help="self-play training loop")
    _common(p, train=True)
    p.add_argument("--resume", action="store_true", help="continue from the run's state.npz")

    p = sub.add_parser("evaluate", help="accuracy, champion and expert tests of a checkpoint")
    _common(p, search=True)
    p.add_argument("--checkpoint", required=True, help='NIMZ file, or "oracle" / "uniform"')
    p.add_argument("--sims", type=int)
    p.add_argument("--games", type=int, default=200)
    p.add_argument("--expert-sample", type=int, default=1000)

    p = sub.add_parser("elo", help="dump or replay a run's Elo pool")
    _common(p, board=False)
    p.add_argument("--run", required=True, help="training run directory")
    p.add_argument("--replay", action="store_true", help="re-rate every checkpoint from scratch")
    p.add_argument("--sims", type=int)

    p = sub.add_parser("oracle", help="exact value and winning moves of a position")
    p.add_argument("--board", type=_heaps_arg, required=True)
    p.add_argument("--position", type=str, help="current heap sizes (default: full board)")

    p = sub.add_parser("analyze", help="prior/value/search table for one position")
    _common(p, search=True)
    p.add_argument("--checkpoint", required=True, help='NIMZ file, or "oracle" / "uniform"')
    p.add_argument("--position", type=str)
    p.add_argument("--sims", type=_ladder_arg, default=(64, 256, 1024, 65536))
    p.add_argument("--top", type=int, default=2)

    for name, help_text in (("parity", "parity extrapolation lab"),
                            ("nimsum-policy", "winning-move class lab")):
        p = sub.add_parser(name, help=help_text)
        _common(p, board=False)
        p.add_argument("--lr", type=float)
        p.add_argument("--steps", type=float)
        p.add_argument("--layers", type=int)
        p.add_argument("--eval-every", type=int)
        p.add_argument("--eval-samples", type=int)
        p.add_argument("--stop-when-converged", action="store_true")
        if name == "parity":
            p.add_argument("--length", type=int)
        else:
            p.add_argument("--heaps", type=int)

    p = sub.add_parser("play", help="match series against a random or perfect opponent")
    _common(p, search=True)
    p.add_argument("--checkpoint", required=True, help='NIMZ file, or "oracle" / "uniform" / "random"')
    p.add_argument("--opponent", choices=["random", "perfect", "both"], default="both")
    p.add_argument("--games", type=int, default=200)
    p.add_argument("--sims", type=int)
    return parser


def _config(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in
                 ("board", "seed", "out", "workers", "alpha", "epsilon", "c1", "c2",
                  "iterations", "episodes", "lr", "sims")}
    if not isinstance(overrides["sims"], (int, type(None))):
        overrides["sims"] = None  # analyze takes a ladder, handled separately
    return load_config(args.config, overrides)


def _load_agent(spec: str, board: tuple[int, ...] | None):
    """Evaluator named by ``--checkpoint`` and the board it plays on."""
    if spec in ("oracle", "uniform", "random"):
        if board is None:
            raise UsageError(f"--board is required with --checkpoint {spec}")
        agent = {"oracle": OracleStubNet, "uniform": UniformNet}.get(spec)
        return (agent() if agent else random_player), board
    desc, _ = read_checkpoint(spec)
    net = PolicyValueNet.load(spec, board if board is not None else desc.capacities)
    return TableEvaluator(net, net.capacities), net.capacities


def _board_flag(args):
    return getattr(args, "board", None)


def _position(board, text):
    if text is None:
        return NimBoard.full(board)
    try:
        return NimBoard(board, parse_heaps(text))
    except ValueError as exc:
        raise UsageError(f"bad --position: {exc}") from None


def _search_config(cfg: RunConfig, sims):
    t = cfg.train
    return SearchConfig(sims or t.simulations, t.c1, t.c2, t.dirichlet_alpha, 0.0,
                        t.temperature_plies, t.c_puct)


def cmd_oracle(args, out):
    board = _board_flag(args)
    position = _position(board, args.position)
    wins = winning_moves(position)
    status = "WON" if wins else "LOST"
    moves = ", ".join(m.label for m in wins) or "none"
    print(f"nim-sum {nim_sum(position)}, {status}, winning moves: {moves}", file=out)


def cmd_train(args, out):
    cfg = _config(args)
    train = cfg.resolved_train()
    run_dir = cfg.output_dir(f"train-{format_heaps(train.board).replace(',', '-')}-s{train.seed}")
    write_config(cfg, run_dir)

    def log(row):
        elo = "-" if row["elo"] is None else f"{row['elo']:.1f}"
        print(f"iter {row['iteration']:>4}  elo {elo:>7}"
              f"  top1 {row['policy_top1_accuracy']:.3f} (base {row['random_policy_baseline']:.3f})"
              f"  value {row['value_sign_accuracy']:.3f}  loss {row['policy_loss']:.3f}/"
              f"{row['value_loss']:.3f}  {row['wall_seconds']:.1f}s", file=out, flush=True)

    full_training_loop(train, run_dir, resume=args.resume, log=log)
    print(f"run directory: {run_dir}", file=out)


def cmd_evaluate(args, out):
    cfg = _config(args)
    agent, board = _load_agent(args.checkpoint, _board_flag(args))
    if not hasattr(agent, "evaluate_positions"):
        raise UsageError("evaluate needs a network, not a random player")
    search = _search_config(replace_board(cfg, board), args.sims)
    positions = evaluation_positions(board, cfg.train.eval_sample,
                                     seeding.stream(cfg.seed, seeding.EVAL))
    report = accuracy_report(agent, board, positions)
    print(report.format(), file=out)
    rates = champion_test(agent, board, args.games, search, seeding.stream(cfg.seed, seeding.EVAL, 1))
    won = positions[np.bitwise_xor.reduce(positions, axis=1) != 0][: args.expert_sample]
    expert = expert_test(agent, won, board, search, seeding.stream(cfg.seed, seeding.EVAL, 2))
    print(f"champion vs random   {rates['random']:.4f}", file=out)
    print(f"champion vs perfect  {rates['perfect']:.4f}", file=out)
    print(f"expert ({len(won)} won positions)  {expert:.4f}", file=out)
    if cfg.out:
        path = Path(cfg.out) / "evaluate.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        new = not path.exists()
        with open(path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(["checkpoint", "board", "positions", "policy_top1_accuracy",
                                 "random_policy_baseline", "value_sign_accuracy",
                                 "champion_vs_random", "champion_vs_perfect", "expert"])
            writer.writerow([args.checkpoint, format_heaps(board), report.sample_size,
                             report.policy_top1, report.random_baseline, report.value_sign,
                             rates["random"], rates["perfect"], expert])


def replace_board(cfg: RunConfig, board) -> RunConfig:
    return replace(cfg, board=tuple(board))


def cmd_elo(args, out):
    run_dir = Path(args.run)
    if not args.replay:
        path = run_dir / "elo.csv"
        if not path.exists():
            raise FileNotFoundError(f"{path} does not exist")
        out.write(path.read_text())
        return
    cfg = _config(args)
    ckpts = sorted((run_dir / "checkpoints").glob("iter_*.nimz"))
    if not ckpts:
        raise FileNotFoundError(f"no checkpoints under {run_dir / 'checkpoints'}")
    board = read_checkpoint(ckpts[0])[0].capacities
    search = _search_config(replace_board(cfg, board), args.sims)
    pool = EloPool(cfg.train.k_rule)
    for path in ckpts:
        it = int(path.stem.split("_")[1])
        table = TableEvaluator(PolicyValueNet.load(path, board), board)
        tournament_round(pool, RatedAgent(it, str(path), player=SearchPlayer(table, search)), board,
                         cfg.train.games_per_pairing, seeding.stream(cfg.seed, seeding.ELO, it))
    out.write(pool.to_csv())


def cmd_analyze(args, out):
    cfg = _config(args)
    agent, board = _load_agent(args.checkpoint, _board_flag(args))
    if not hasattr(agent, "evaluate"):
        raise UsageError("analyze needs a network, not a random player")
    position = _position(board, args.position)
    search = _search_config(replace_board(cfg, board), None)
    analysis = analyze_position(agent, position, args.sims, args.top, search,
                                seeding.stream(cfg.seed, seeding.EVAL))
    print(analysis.format(), file=out)


def _supervised(args):
    cfg = _config(args)
    sup = cfg.resolved_supervised()
    changes = {}
    for flag, field_name in (("steps", "steps"), ("layers", "layers"), ("eval_every", "eval_every"),
                             ("eval_samples", "eval_samples"), ("length", "length"),
                             ("heaps", "heaps")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[field_name] = int(value)
    if args.stop_when_converged:
        changes["stop_when_converged"] = True
    try:
        return cfg, replace(sup, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _lab_log(out):
    def log(row):
        print(f"step {row['step']:>8}  train {row['train_accuracy']:.4f}  "
              f"eval {row['eval_accuracy']:.4f}  loss {row['loss']:.4f}", file=out, flush=True)
    return log


def cmd_parity(args, out):
    cfg, sup = _supervised(args)
    run_dir = cfg.output_dir(f"parity-n{sup.length}-s{sup.seed}")
    write_config(cfg, run_dir)
    result = train_parity(sup, run_dir, _lab_log(out))
    print(f"converged at step {result.converged_step}" if result.converged_step is not None
          else "did not converge", file=out)
    for length, acc in result.extrapolation.items():
        print(f"length {length}: accuracy {acc:.4f}", file=out)


def cmd_nimsum(args, out):
    cfg, sup = _supervised(args)
    run_dir = cfg.output_dir(f"nimsum-h{sup.heaps}-l{sup.layers}-s{sup.seed}")
    write_config(cfg, run_dir)
    result = train_nimsum_policy(sup, run_dir, _lab_log(out))
    print(f"final test accuracy {result.final_eval_accuracy:.4f}", file=out)


def cmd_play(args, out):
    cfg = _config(args)
    agent, board = _load_agent(args.checkpoint, _board_flag(args))
    search = _search_config(replace_board(cfg, board), args.sims)
    opponents = ("random", "perfect") if args.opponent == "both" else (args.opponent,)
    rates = champion_test(agent, board, args.games, search, seeding.stream(cfg.seed, seeding.EVAL),
                          opponents)
    for name, rate in rates.items():
        print(f"first-mover win rate vs {name}: {rate:.4f} over {args.games} games", file=out)


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "elo": cmd_elo,
    "oracle": cmd_oracle,
    "analyze": cmd_analyze,
    "parity": cmd_parity,
    "nimsum-policy": cmd_nimsum,
    "play": cmd_play,
}


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args, out)
    except (UsageError, ConfigError) as exc:
        print(f"nimzero {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, CheckpointError) as exc:
        print(f"nimzero {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

