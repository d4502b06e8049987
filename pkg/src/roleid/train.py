"""Training loops, LR schedule, dev-set checkpoint selection, transfer.

The schedule follows the two-phase rule: the base learning rate for the
first two thirds of all steps, the late rate for the final third. Dev
accuracy is evaluated every `eval_every` steps and at epoch ends, and the
parameters of the best evaluation (ties resolved toward the earlier step)
are returned as the checkpoint.

Transfer runs in two stages: a blind warm-up that trains only the fresh
classifier head at a fixed rate, then the full procedure; checkpoint
selection happens entirely in stage two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import tensor as T
from .checkpoint import ModelCheckpoint
from .metrics import evaluate
from .model import (
    CLASSIFIER_PARAMS,
    ModelConfig,
    ModelParams,
    Tensor,
    collate,
    copy_params,
    cross_entropy,
    forward,
    init_params,
)
from .optim import AdamState, adam_step, clip_grads, zero_grads
from .rng import DEFAULT_SEED, derive
from .text import EncodedUser, EncodingConfig, LabelSet, UserRecord, Vocab, encode_user


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    base_lr: float = 1e-4
    late_lr: float = 1e-5
    eval_every: int = 100
    seed: int = DEFAULT_SEED
    head_warmup_epochs: int = 3
    head_lr: float = 0.01
    clip_norm: float | None = None

    def __post_init__(self):
        for name in ("epochs", "batch_size", "base_lr", "late_lr", "eval_every", "head_warmup_epochs", "head_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.late_lr >= self.base_lr:
            raise ValueError("late_lr must be smaller than base_lr")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def lr_at_step(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Base rate through floor(2/3) of all steps, late rate afterwards."""
    if not 1 <= step <= total_steps:
        raise ValueError(f"step {step} outside [1, {total_steps}]")
    return cfg.base_lr if step <= (2 * total_steps) // 3 else cfg.late_lr


def encode_corpus(
    records: list[UserRecord], vocab: Vocab, enc: EncodingConfig, labels: LabelSet
) -> list[EncodedUser]:
    return [encode_user(r, vocab, enc, labels) for r in records]


def _dev_eval(params, model_cfg, dev_users, labels):
    report = evaluate(dev_users, params, model_cfg, labels)
    return report.accuracy, report.macro_f1


def _run_loop(
    params: ModelParams,
    model_cfg: ModelConfig,
    train_users: list[EncodedUser],
    dev_users: list[EncodedUser],
    labels: LabelSet,
    cfg: TrainConfig,
    *,
    epochs: int,
    trainable: set[str] | None = None,
    constant_lr: float | None = None,
    select_best: bool = True,
    seed_tag: str = "train",
    log_step_offset: int = 0,
) -> tuple[dict, list[dict]]:
    """Shared minibatch loop. Returns (best snapshot info, log records)."""
    n = len(train_users)
    if n == 0:
        raise ValueError("empty training set")
    if select_best and not dev_users:
        raise ValueError("dev set must be nonempty")
    n_batches = math.ceil(n / cfg.batch_size)
    total_steps = epochs * n_batches
    state = AdamState()
    records: list[dict] = []
    best = {"metric": -1.0, "step": -1, "params": None}
    step = 0

    def evaluate_now(record):
        acc, macro = _dev_eval(params, model_cfg, dev_users, labels)
        record["dev_accuracy"] = acc
        record["dev_macro_f1"] = macro
        if acc > best["metric"]:
            best.update(metric=acc, step=log_step_offset + step, params=copy_params(params))
            record["checkpoint_saved"] = True

    for epoch in range(1, epochs + 1):
        order = derive(cfg.seed, seed_tag, "shuffle", epoch).permutation(n)
        evaluated = False
        for lo in range(0, n, cfg.batch_size):
            batch = collate([train_users[i] for i in order[lo : lo + cfg.batch_size]])
            step += 1
            evaluated = False
            lr = constant_lr if constant_lr is not None else lr_at_step(step, total_steps, cfg)
            rng = derive(cfg.seed, seed_tag, "dropout", step)
            _, probs = forward(batch, params, model_cfg, mode="train", rng=rng)
            loss = cross_entropy(probs, batch.labels)
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                raise TrainingDiverged(
                    f"non-finite training loss at step {log_step_offset + step} (lr={lr:g})"
                )
            zero_grads(params)
            T.backward(loss)
            if cfg.clip_norm is not None:
                clip_grads(params, cfg.clip_norm)
            grads = {
                name: p.grad
                for name, p in params.items()
                if p.grad is not None and (trainable is None or name in trainable)
            }
            adam_step(params, grads, state, lr)
            record = {
                "step": log_step_offset + step,
                "epoch": epoch,
                "lr": lr,
                "train_loss": loss_value,
                "checkpoint_saved": False,
            }
            if select_best and step % cfg.eval_every == 0:
                evaluate_now(record)
                evaluated = True
            records.append(record)
        if select_best and not evaluated:
            record = {
                "step": log_step_offset + step,
                "epoch": epoch,
                "lr": records[-1]["lr"],
                "train_loss": records[-1]["train_loss"],
                "checkpoint_saved": False,
            }
            evaluate_now(record)
            records.append(record)

    if best["params"] is None:
        best.update(step=log_step_offset + step, params=copy_params(params))
    return best, records


def train(
    records_train: list[UserRecord] | list[EncodedUser],
    records_dev: list[UserRecord] | list[EncodedUser],
    vocab: Vocab,
    labels: LabelSet,
    model_cfg: ModelConfig,
    enc: EncodingConfig,
    cfg: TrainConfig,
    params: ModelParams | None = None,
    word_emb: np.ndarray | None = None,
) -> tuple[ModelCheckpoint, list[dict]]:
    """Full training run; returns the best-dev checkpoint and the log."""
    train_users = _ensure_encoded(records_train, vocab, enc, labels)
    dev_users = _ensure_encoded(records_dev, vocab, enc, labels)
    if params is None:
        params = init_params(model_cfg, vocab, seed=cfg.seed, word_emb=word_emb)
    best, records = _run_loop(
        params, model_cfg, train_users, dev_users, labels, cfg, epochs=cfg.epochs
    )
    ckpt = ModelCheckpoint(
        params=best["params"],
        config=model_cfg,
        vocab=vocab,
        labels=labels,
        best_metric=best["metric"],
        best_step=best["step"],
    )
    return ckpt, records


def _ensure_encoded(records, vocab, enc, labels) -> list[EncodedUser]:
    if records and isinstance(records[0], EncodedUser):
        return records
    return encode_corpus(records, vocab, enc, labels)


def pretrain_public_figure(
    records_train: list[UserRecord],
    records_dev: list[UserRecord],
    vocab: Vocab,
    labels: LabelSet,
    model_cfg: ModelConfig,
    enc: EncodingConfig,
    cfg: TrainConfig,
    finetune_user_ids: set[str] | None = None,
    word_emb: np.ndarray | None = None,
) -> tuple[ModelCheckpoint, list[dict]]:
    """Binary pretraining; rejects any user shared with the fine-tune set."""
    if len(labels) != 2:
        raise ValueError(f"pretraining expects a binary label set, got {len(labels)} classes")
    if finetune_user_ids:
        shared = {r.id for r in [*records_train, *records_dev]} & set(finetune_user_ids)
        if shared:
            sample = sorted(shared)[:5]
            raise ValueError(
                f"{len(shared)} user ids appear in both the pretraining and "
                f"fine-tune corpora (e.g. {sample}); the sets must be disjoint"
            )
    return train(records_train, records_dev, vocab, labels, model_cfg, enc, cfg, word_emb=word_emb)


def init_from_pretrained(
    ckpt: ModelCheckpoint,
    new_labels: LabelSet,
    vocab: Vocab,
    seed: int = DEFAULT_SEED,
    target_cfg: ModelConfig | None = None,
) -> tuple[ModelParams, ModelConfig]:
    """Copy every parameter except the classifier head, which is re-drawn.

    The checkpoint's configuration and vocabulary must match the target
    apart from the class count; the first mismatching field is named.
    """
    if vocab.fingerprint() != ckpt.vocab.fingerprint():
        raise ValueError("vocab fingerprint differs from the pretrained checkpoint's vocabulary")
    cfg = replace(ckpt.config, num_classes=len(new_labels))
    if target_cfg is not None:
        for f in fields(ModelConfig):
            if f.name == "num_classes":
                continue
            if getattr(target_cfg, f.name) != getattr(cfg, f.name):
                raise ValueError(
                    f"config field {f.name!r} differs between checkpoint "
                    f"({getattr(cfg, f.name)}) and target ({getattr(target_cfg, f.name)})"
                )
        cfg = replace(target_cfg, num_classes=len(new_labels))
    fresh = init_params(cfg, vocab, seed=seed)
    params: ModelParams = {}
    for name, p in ckpt.params.items():
        if name in CLASSIFIER_PARAMS:
            params[name] = fresh[name]
        else:
            params[name] = Tensor(p.data.copy(), requires_grad=True)
    return params, cfg


def finetune(
    params: ModelParams,
    model_cfg: ModelConfig,
    records_train: list[UserRecord] | list[EncodedUser],
    records_dev: list[UserRecord] | list[EncodedUser],
    vocab: Vocab,
    labels: LabelSet,
    enc: EncodingConfig,
    cfg: TrainConfig,
) -> tuple[ModelCheckpoint, list[dict]]:
    """Stage 1: classifier head only, fixed head_lr, no selection.
    Stage 2: the full training procedure."""
    train_users = _ensure_encoded(records_train, vocab, enc, labels)
    dev_users = _ensure_encoded(records_dev, vocab, enc, labels)
    records: list[dict] = [{"event": "stage_start", "stage": "head_warmup", "step": 0}]
    _, warmup_records = _run_loop(
        params,
        model_cfg,
        train_users,
        dev_users,
        labels,
        cfg,
        epochs=cfg.head_warmup_epochs,
        trainable=set(CLASSIFIER_PARAMS),
        constant_lr=cfg.head_lr,
        select_best=False,
        seed_tag="warmup",
    )
    records.extend(warmup_records)
    offset = warmup_records[-1]["step"] if warmup_records else 0
    records.append({"event": "stage_start", "stage": "full", "step": offset})
    best, full_records = _run_loop(
        params,
        model_cfg,
        train_users,
        dev_users,
        labels,
        cfg,
        epochs=cfg.epochs,
        seed_tag="finetune",
        log_step_offset=offset,
    )
    records.extend(full_records)
    ckpt = ModelCheckpoint(
        params=best["params"],
        config=model_cfg,
        vocab=vocab,
        labels=labels,
        best_metric=best["metric"],
        best_step=best["step"],
    )
    return ckpt, records
