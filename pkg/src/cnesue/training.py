"""Negative-sampling training loop with validation-AUC early stopping."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import ImpressionSample, NewsTable
from .errors import ConfigError, NonFiniteError
from .evaluation import METRICS, MetricReport, evaluate
from .model import Recommender, save_model
from .tensor import Adam, Tape, Tensor, clip_grad_norm, concat, make_op

log = logging.getLogger(__name__)

LOG_HEADER = "epoch\ttrain_loss\tauc\tmrr\tndcg@5\tndcg@10\tseconds"


@dataclass
class TrainConfig:
    k: int = 4
    batch_size: int = 64
    lr: float = 1e-4
    patience: int = 5
    max_epochs: int = 20
    seed: int = 0
    grad_clip: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max epochs must be >= 1, got {self.max_epochs}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainState:
    epoch: int = 0
    best_auc: float = -math.inf
    best_epoch: int = -1
    stale_epochs: int = 0
    history: list = field(default_factory=list)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    report: MetricReport
    seconds: float

    def line(self) -> str:
        vals = "\t".join(f"{self.report[m]:.6f}" for m in METRICS)
        return f"{self.epoch}\t{self.train_loss:.6f}\t{vals}\t{self.seconds:.2f}"


def ranking_loss(scores: Tensor, sample_ids: Sequence[str] | None = None) -> Tensor:
    """Mean over rows of ``-log softmax(scores)[0]``; column 0 is the clicked item."""
    s = scores.data
    if not np.all(np.isfinite(s)):
        bad = int(np.argwhere(~np.isfinite(s))[0][0])
        who = sample_ids[bad] if sample_ids is not None else bad
        raise NonFiniteError(f"non-finite score for sample {who}")
    B = s.shape[0]
    shifted = s - s.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    per_sample = lse - shifted[:, 0]
    prob = np.exp(shifted - lse[:, None])

    def backward(g):
        d = prob.copy()
        d[:, 0] -= 1.0
        return ((g / B) * d).astype(s.dtype),

    return make_op(np.asarray(per_sample.mean(), dtype=s.dtype), (scores,), backward)


def nll_loss(positive: Tensor, negatives: Tensor) -> Tensor:
    """Softmax negative log-likelihood of ``positive [B]`` against ``negatives [B, K]``."""
    B = positive.shape[0]
    return ranking_loss(concat([positive.reshape(B, 1), negatives], axis=1))


def batches(samples: Sequence, size: int, rng: np.random.Generator | None = None):
    order = rng.permutation(len(samples)) if rng is not None else np.arange(len(samples))
    for start in range(0, len(order), size):
        yield [samples[i] for i in order[start : start + size]]


def train_step(model: Recommender, opt: Adam, batch, news: NewsTable, rng, grad_clip: float) -> float:
    model.params.zero_grad()
    with Tape() as tape:
        scores = model.forward(batch, news, training=True, rng=rng)
        loss = ranking_loss(scores, [s.impression_id for s in batch])
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteError(f"loss became {value}")
    tape.backward(loss)
    if grad_clip > 0:
        clip_grad_norm(model.params, grad_clip)
    opt.step()
    return value


def train(
    model: Recommender,
    train_samples: Sequence[ImpressionSample],
    valid_samples: Sequence[ImpressionSample],
    news: NewsTable,
    cfg: TrainConfig,
    out_dir=None,
    valid_news: NewsTable | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    extra_meta: dict | None = None,
) -> TrainState:
    """Train with early stopping on validation AUC.

    With ``out_dir`` set, writes ``metrics.tsv`` (one line per epoch),
    ``model.ckpt`` (best epoch) and ``last.ckpt``.  The model's parameters
    are left at the best epoch's values on return.
    """
    if not train_samples:
        raise ConfigError("training set is empty")
    if not valid_samples:
        raise ConfigError("validation set is empty")
    valid_news = valid_news or news
    shuffle_rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(cfg.seed + 1)
    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    state = TrainState()
    best_params = model.params.state_dict()
    meta = dict(extra_meta or {})
    meta["train"] = cfg.to_dict()

    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "metrics.tsv", "w", encoding="utf-8")
        log_fh.write(LOG_HEADER + "\n")
    try:
        for epoch in range(cfg.max_epochs):
            t0 = time.perf_counter()
            losses = []
            for batch in batches(train_samples, cfg.batch_size, shuffle_rng):
                losses.append(train_step(model, opt, batch, news, dropout_rng, cfg.grad_clip))
            report = evaluate(model, valid_samples, valid_news)
            rec = EpochRecord(epoch, float(np.mean(losses)), report, time.perf_counter() - t0)
            state.epoch = epoch
            state.history.append(rec)
            log.info("epoch %d loss %.5f val auc %.5f", epoch, rec.train_loss, report["auc"])
            if log_fh:
                log_fh.write(rec.line() + "\n")
                log_fh.flush()
            if on_epoch:
                on_epoch(rec)
            val_auc = report["auc"]
            if val_auc > state.best_auc:
                state.best_auc, state.best_epoch, state.stale_epochs = val_auc, epoch, 0
                best_params = model.params.state_dict()
                if out_dir is not None:
                    save_model(out_dir / "model.ckpt", model, epoch=epoch, metrics=report.values, **meta)
            else:
                state.stale_epochs += 1
            if out_dir is not None:
                save_model(out_dir / "last.ckpt", model, epoch=epoch, metrics=report.values, **meta)
            if state.stale_epochs >= cfg.patience:
                log.info("early stop at epoch %d (best %d)", epoch, state.best_epoch)
                break
    finally:
        if log_fh:
            log_fh.close()
    model.params.load_state_dict(best_params)
    return state


def read_metrics_log(path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    keys = lines[0].split("\t")
    return [dict(zip(keys, (float(v) for v in line.split("\t")))) for line in lines[1:] if line]
