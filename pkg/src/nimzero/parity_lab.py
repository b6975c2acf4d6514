"""Supervised learnability experiments.

``train_parity`` fits an LSTM + linear + sigmoid classifier to the parity of
the 1s in a {-1, 0, 1} string and measures it on strings 10 tokens longer
than any it trained on. ``train_nimsum_policy`` asks a stacked LSTM with
batch norm to name the type of the winning move on nim boards whose heaps
hold at most two counters.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from nimzero import seeding
from nimzero.game import encode_positions
from nimzero.nn.core import Module, bce_with_logits, relu, softmax_cross_entropy
from nimzero.nn.layers import BatchNorm1d, Linear, LSTMStack
from nimzero.nn.optim import Adam
from nimzero.oracle import winning_move_classes

CSV_COLUMNS = ["step", "train_accuracy", "eval_accuracy", "loss"]
SPOT_LENGTHS = (100, 1000)  # extra extrapolation probes after a parity run


@dataclass(frozen=True)
class SupervisedConfig:
    length: int = 20  # parity training length n
    heaps: int = 7  # nim-sum lab board size h
    steps: int | None = None  # None: 1e6 for parity, 1e5 for nim-sum
    batch_size: int = 128
    learning_rate: float = 1e-3
    layers: int = 1
    hidden_size: int = 128
    seed: int = 0
    eval_every: int = 1000
    eval_samples: int = 10000
    converge_threshold: float = 0.99
    converge_patience: int = 10
    stop_when_converged: bool = False

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.heaps < 2:
            raise ValueError("heaps must be >= 2")
        for name in ("batch_size", "layers", "hidden_size", "eval_every", "eval_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.steps is not None and self.steps < 0:
            raise ValueError("steps must be non-negative")

    @property
    def eval_length(self) -> int:
        return self.length + 10


@dataclass(frozen=True)
class ParitySample:
    tokens: tuple[int, ...]
    label: int


def parity_label(tokens) -> int:
    """1 if the string holds an odd number of 1s; -1s do not count."""
    return int(np.count_nonzero(np.asarray(tokens) == 1) % 2)


def gen_parity_batch(n: int, batch: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """``batch`` strings of length ``n`` and their parity labels.

    Each string has k ~ U{1..n} nonzero positions, chosen without
    replacement, each independently 1 or -1.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    k = rng.integers(1, n + 1, size=batch)
    ranks = np.argsort(rng.random((batch, n)), axis=1)
    chosen = ranks < k[:, None]
    signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=(batch, n))
    tokens = np.where(chosen, signs, 0).astype(np.int8)
    labels = (np.count_nonzero(tokens == 1, axis=1) % 2).astype(np.int64)
    return tokens, labels


def gen_nimsum_batch(heaps: int, batch: int, rng):
    """Balanced positions with heaps in {0, 1, 2} and their winning-move class.

    Returns ``(tokens, labels, positions)``. Class ``c`` gets ``batch // 3``
    rows plus one of the remainder for the lowest classes. Positions without
    a winning move are rejected.
    """
    if heaps < 2:
        raise ValueError("need at least two heaps")
    quota = np.full(3, batch // 3)
    quota[: batch % 3] += 1
    picked = [[] for _ in range(3)]
    have = np.zeros(3, dtype=np.int64)
    while (have < quota).any():
        cand = rng.integers(0, 3, size=(max(64, 2 * batch), heaps))
        labels = winning_move_classes(cand)
        for c in range(3):
            need = quota[c] - have[c]
            if need > 0:
                rows = cand[labels == c][:need]
                picked[c].append(rows)
                have[c] += rows.shape[0]
    positions = np.concatenate([np.concatenate(p) for p in picked if p])
    labels = np.repeat(np.arange(3), quota)
    order = rng.permutation(batch)
    positions, labels = positions[order], labels[order]
    return encode_positions((2,) * heaps, positions), labels, positions


# ---------------------------------------------------------------------------
# models


class ParityNet(Module):
    """LSTM, a one-unit linear layer and a sigmoid (applied inside the loss)."""

    def __init__(self, hidden_size=128, layers=1, rng=None, dtype=np.float32):
        self.trunk = LSTMStack(1, hidden_size, layers, rng, dtype)
        self.head = Linear(hidden_size, 1, rng, dtype)

    def named_params(self):
        return self.trunk.named_params() + [(f"head.{n}", p) for n, p in self.head.named_params()]

    def forward(self, tokens, train=False):
        x = np.asarray(tokens, dtype=self.head.w.value.dtype).T[:, :, None]
        return self.head.forward(self.trunk.forward_last(x, train), train)[:, 0]

    def backward(self, dlogits):
        self.trunk.backward_last(self.head.backward(dlogits[:, None].astype(self.head.w.value.dtype)))

    def predict(self, tokens, chunk=2000):
        return np.concatenate([self.forward(tokens[i : i + chunk]) > 0
                               for i in range(0, len(tokens), chunk)]).astype(np.int64)


class NimsumPolicyNet(Module):
    """Stacked LSTM, batch norm, rectifier and a three-way softmax."""

    def __init__(self, hidden_size=128, layers=1, rng=None, dtype=np.float32):
        self.trunk = LSTMStack(1, hidden_size, layers, rng, dtype)
        self.norm = BatchNorm1d(hidden_size, dtype=dtype)
        self.head = Linear(hidden_size, 3, rng, dtype)
        self._pre = None

    def named_params(self):
        return (self.trunk.named_params()
                + [(f"norm.{n}", p) for n, p in self.norm.named_params()]
                + [(f"head.{n}", p) for n, p in self.head.named_params()])

    def forward(self, tokens, train=False):
        self.norm.train(train)
        x = np.asarray(tokens, dtype=self.head.w.value.dtype).T[:, :, None]
        pre = self.norm.forward(self.trunk.forward_last(x, train), train)
        if train:
            self._pre = pre
        return self.head.forward(relu(pre), train)

    def backward(self, dlogits):
        d = self.head.backward(dlogits.astype(self.head.w.value.dtype)) * (self._pre > 0)
        self.trunk.backward_last(self.norm.backward(d))

    def predict(self, tokens, chunk=2000):
        return np.concatenate([np.argmax(self.forward(tokens[i : i + chunk]), axis=1)
                               for i in range(0, len(tokens), chunk)])


# ---------------------------------------------------------------------------
# training


@dataclass
class LabResult:
    rows: list[dict]
    converged_step: int | None
    final_eval_accuracy: float
    extrapolation: dict[int, float] = field(default_factory=dict)


def _run(model, make_batch, loss_fn, eval_tokens, eval_labels, config: SupervisedConfig,
         steps: int, out_dir, name: str, log=None) -> LabResult:
    out_dir = Path(out_dir) if out_dir is not None else None
    optimizer = Adam(model.named_params(), lr=config.learning_rate)
    train_rng = seeding.stream(config.seed, seeding.SUPERVISED, 0)
    rows, streak, converged = [], 0, None
    started = time.time()
    writer = fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / f"{name}.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)

    def evaluate(step, train_acc, loss):
        nonlocal streak, converged
        acc = float(np.mean(model.predict(eval_tokens) == eval_labels))
        row = {"step": step, "train_accuracy": train_acc, "eval_accuracy": acc, "loss": loss}
        rows.append(row)
        if writer is not None:
            writer.writerow([step, repr(train_acc), repr(acc), repr(loss)])
            fh.flush()
        if log is not None:
            log(row)
        streak = streak + 1 if acc >= config.converge_threshold else 0
        if converged is None and streak >= config.converge_patience:
            converged = step
        return acc

    try:
        evaluate(0, float("nan"), float("nan"))
        hits = seen = 0
        loss_sum = 0.0
        for step in range(1, steps + 1):
            tokens, labels = make_batch(train_rng)
            optimizer.zero_grad()
            out = model.forward(tokens, train=True)
            loss, grad, correct = loss_fn(out, labels)
            model.backward(grad)
            optimizer.step()
            hits += correct
            seen += len(labels)
            loss_sum += loss
            if step % config.eval_every == 0 or step == steps:
                n_steps = step - rows[-1]["step"]
                evaluate(step, hits / seen, loss_sum / n_steps)
                hits = seen = 0
                loss_sum = 0.0
                if converged is not None and config.stop_when_converged:
                    break
    finally:
        if fh is not None:
            fh.close()
    result = LabResult(rows, converged, rows[-1]["eval_accuracy"])
    if out_dir is not None:
        manifest = {
            "experiment": name,
            "config": asdict(config),
            "steps": steps,
            "seed": config.seed,
            "converged_step": converged,
            "final_eval_accuracy": result.final_eval_accuracy,
            "wall_seconds": time.time() - started,
        }
        (out_dir / f"{name}_manifest.json").write_text(json.dumps(manifest, indent=2))
    return result


def _parity_loss(logits, labels):
    loss, grad = bce_with_logits(logits, labels)
    return loss, grad, int(np.sum((logits > 0) == (labels == 1)))


def _class_loss(logits, labels):
    onehot = np.eye(3)[labels]
    loss, grad = softmax_cross_entropy(logits.astype(np.float64), onehot)
    return loss, grad, int(np.sum(np.argmax(logits, axis=1) == labels))


def train_parity(config: SupervisedConfig, out_dir=None, log=None) -> LabResult:
    """Train on length ``n`` strings, evaluate on length ``n + 10``."""
    steps = 1_000_000 if config.steps is None else config.steps
    model = ParityNet(config.hidden_size, config.layers, seeding.stream(config.seed, seeding.INIT))
    eval_tokens, eval_labels = gen_parity_batch(
        config.eval_length, config.eval_samples, seeding.stream(config.seed, seeding.SUPERVISED, 1))
    batch = lambda rng: gen_parity_batch(config.length, config.batch_size, rng)  # noqa: E731
    name = f"parity_n{config.length}_seed{config.seed}"
    result = _run(model, batch, _parity_loss, eval_tokens, eval_labels, config, steps, out_dir,
                  name, log)
    for i, length in enumerate(SPOT_LENGTHS):
        rng = seeding.stream(config.seed, seeding.SUPERVISED, 2 + i)
        result.extrapolation[length] = extrapolation_accuracy(model, length, 1000, rng)
    if out_dir is not None:
        path = Path(out_dir) / f"{name}_manifest.json"
        manifest = json.loads(path.read_text())
        manifest["extrapolation"] = {str(k): v for k, v in result.extrapolation.items()}
        path.write_text(json.dumps(manifest, indent=2))
    return result


def extrapolation_accuracy(model, length: int, samples: int, rng) -> float:
    """Parity accuracy of ``model`` on fresh strings of ``length`` tokens."""
    tokens, labels = gen_parity_batch(length, samples, rng)
    return float(np.mean(model.predict(tokens, chunk=500) == labels))


def train_nimsum_policy(config: SupervisedConfig, out_dir=None, log=None) -> LabResult:
    """Three-class winning-move prediction on ``config.heaps`` heaps of at most two."""
    steps = 100_000 if config.steps is None else config.steps
    model = NimsumPolicyNet(config.hidden_size, config.layers,
                            seeding.stream(config.seed, seeding.INIT))
    eval_tokens, eval_labels, _ = gen_nimsum_batch(
        config.heaps, config.eval_samples, seeding.stream(config.seed, seeding.SUPERVISED, 1))

    def batch(rng):
        tokens, labels, _ = gen_nimsum_batch(config.heaps, config.batch_size, rng)
        return tokens, labels

    return _run(model, batch, _class_loss, eval_tokens, eval_labels, config, steps, out_dir,
                f"nimsum_h{config.heaps}_l{config.layers}_seed{config.seed}", log)
