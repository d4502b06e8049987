"""End-to-end gradient verification on a tiny model.

Builds a desk-sized configuration (dim=4, 2 heads, 3 classes, 2 tweets of
3 tokens, 3-token descriptions), perturbs all parameters to a generic
point, and sweeps central finite differences against the backward pass,
once per ablation-flag combination.

Two details keep the sweep both honest and affordable:

* The only non-smooth pieces of the network are the char-CNN's relu and
  max pooling, so before sweeping we verify the forward pass sits safely
  away from those kinks (otherwise the difference quotient itself is
  invalid); the jitter seed is advanced until the margin holds.

* The difference quotient for a coordinate only needs the part of the
  graph that depends on it. Embedding coordinates re-run the whole model;
  LSTM coordinates reuse the exact cached embedding outputs; attention and
  classifier coordinates reuse the exact cached Bi-LSTM states. The staged
  losses are asserted bitwise-equal to the full loss before any sweeping.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gradcheck import GradCheckReport, ParamCheck, analytic_grads, fd_compare
from .model import (
    ABLATION_FLAGS,
    Batch,
    ModelConfig,
    active_param_names,
    bilstm_encode,
    classify,
    collate,
    cross_entropy,
    desc_embedded,
    desc_pooled,
    forward,
    fuse_fields,
    init_params,
    tweets_embedded,
    tweets_pooled,
)
from .rng import derive
from .tensor import Tensor
from .text import EncodingConfig, LabelSet, UserRecord, Vocab, encode_user

TINY_LABELS = LabelSet(("alpha", "beta", "gamma"))
TINY_USERS = [
    UserRecord("g0", "ax by cz", ["dq ex fy", "gz ax by"], "alpha"),
    UserRecord("g1", "by dq gz", ["cz ax ex", "fy by dq"], "beta"),
]


def tiny_model_config(**flags) -> ModelConfig:
    return ModelConfig(
        dim=4,
        char_dim=3,
        char_windows=(2,),
        char_maps=(4,),
        heads=2,
        num_classes=3,
        dropout=0.0,
        **flags,
    )


def tiny_encoding_config() -> EncodingConfig:
    return EncodingConfig(desc_tokens=3, tweet_tokens=3, tweets=2, word_chars=4)


def _conv_kink_margin(batch: Batch, params, cfg: ModelConfig) -> float:
    """Smallest distance of any real word's conv unit to a relu or max kink.

    Ties between bitwise-identical window values co-move under any single
    perturbation, so they are skipped when measuring the pooling gap.
    """
    margin = np.inf
    real = np.concatenate(
        [
            batch.desc_chars[batch.desc_mask],
            batch.tweet_chars.reshape(-1, batch.tweet_chars.shape[-1])[
                batch.tweet_word_mask.reshape(-1)
            ],
        ]
    )
    emb = params["char_emb"].data[real]  # (W, K, cd)
    k = real.shape[1]
    for win in cfg.char_windows:
        w = params[f"char_cnn.w{win}"].data
        b = params[f"char_cnn.b{win}"].data
        positions = k - win + 1
        windows = np.concatenate([emb[:, j : j + positions] for j in range(win)], axis=-1)
        pre = windows @ w + b  # (W, positions, maps)
        margin = min(margin, float(np.abs(pre).min()))
        post = np.maximum(pre, 0.0)
        top = post.max(axis=1, keepdims=True)
        gaps = top - post
        runner_up = np.where(gaps > 0, gaps, np.inf).min()
        margin = min(margin, float(runner_up))
    return margin


def build_tiny_setup(flags: dict | None = None, seed: int = 0):
    """Tiny (cfg, params, batch) at a generic, kink-free parameter point."""
    cfg = tiny_model_config(**(flags or {}))
    enc = tiny_encoding_config()
    vocab = Vocab.build(TINY_USERS, min_freq=1, charset="abcdefgqxyz")
    batch = collate([encode_user(u, vocab, enc, TINY_LABELS) for u in TINY_USERS])
    for attempt in range(32):
        params = init_params(cfg, vocab, seed=seed)
        jitter = derive(seed, "gradcheck-jitter", attempt)
        for p in params.values():
            p.data += jitter.uniform(-0.15, 0.15, size=p.data.shape).astype(p.data.dtype)
        if cfg.no_charcnn or _conv_kink_margin(batch, params, cfg) > 5e-3:
            return cfg, params, batch
    raise RuntimeError("could not find a kink-free parameter point for gradcheck")


def _stage_of(name: str) -> str:
    if name in ("word_emb", "char_emb") or name.startswith("char_cnn."):
        return "embed"
    if name.startswith("lstm."):
        return "lstm"
    return "head"


def _loss_builders(cfg: ModelConfig, params, batch: Batch):
    """(full, lstm-stage, head-stage) losses, staged prefixes cached exactly."""
    width = cfg.width
    zeros = np.zeros((batch.size, width))
    b, t, n = batch.tweet_ids.shape
    tweet_word_mask = batch.tweet_word_mask.reshape(b * t, n)

    def full_loss():
        _, probs = forward(batch, params, cfg, mode="eval")
        return cross_entropy(probs, batch.labels)

    with T.no_grad():
        x_d = None if cfg.no_description else desc_embedded(batch, params, cfg)
        x_t = None if cfg.no_tweets else tweets_embedded(batch, params, cfg)

    def lstm_loss():
        r_d = (
            Tensor(zeros)
            if x_d is None
            else desc_pooled(bilstm_encode(x_d, batch.desc_mask, params, cfg), batch, params, cfg)
        )
        r_t = (
            Tensor(zeros)
            if x_t is None
            else tweets_pooled(bilstm_encode(x_t, tweet_word_mask, params, cfg), batch, params, cfg)
        )
        _, probs = classify(fuse_fields(r_d, r_t, params, cfg), params)
        return cross_entropy(probs, batch.labels)

    with T.no_grad():
        h_d = None if x_d is None else bilstm_encode(x_d, batch.desc_mask, params, cfg)
        h_t = None if x_t is None else bilstm_encode(x_t, tweet_word_mask, params, cfg)

    def head_loss():
        r_d = Tensor(zeros) if h_d is None else desc_pooled(h_d, batch, params, cfg)
        r_t = Tensor(zeros) if h_t is None else tweets_pooled(h_t, batch, params, cfg)
        _, probs = classify(fuse_fields(r_d, r_t, params, cfg), params)
        return cross_entropy(probs, batch.labels)

    with T.no_grad():
        reference = float(full_loss().data)
        for staged in (lstm_loss, head_loss):
            if float(staged().data) != reference:
                raise AssertionError("staged gradcheck loss diverged from the full forward")
    return full_loss, lstm_loss, head_loss


def run_tiny_gradcheck(
    flags: dict | None = None, eps: float = 1e-3, tol: float = 1e-4, seed: int = 0
) -> GradCheckReport:
    with T.precision("f64"):
        cfg, params, batch = build_tiny_setup(flags, seed=seed)
        active = active_param_names(cfg, params)
        losses = _loss_builders(cfg, params, batch)
        stage_loss = dict(zip(("embed", "lstm", "head"), losses))
        grads = analytic_grads(losses[0], params)

        report = GradCheckReport(tol=tol, eps=eps)
        for name in sorted(set(params) - active):
            if grads[name] is not None and np.any(grads[name]):
                report.per_param.append(ParamCheck(name, math.inf, -1, 0))
            else:
                report.skipped.append(name)
        for stage in ("embed", "lstm", "head"):
            names = [n for n in params if n in active and _stage_of(n) == stage]
            sub = fd_compare(
                stage_loss[stage],
                {n: params[n] for n in names},
                {n: grads[n] for n in names},
                eps=eps,
                tol=tol,
            )
            report.per_param.extend(sub.per_param)
        return report


def flag_combinations() -> list[dict]:
    """Every valid assignment of the six ablation flags (48 of 64)."""
    combos = []
    for bits in itertools.product([False, True], repeat=len(ABLATION_FLAGS)):
        flags = dict(zip(ABLATION_FLAGS, bits))
        if flags["no_description"] and flags["no_tweets"]:
            continue
        combos.append({k: v for k, v in flags.items() if v})
    return combos


def combo_name(flags: dict) -> str:
    return "+".join(sorted(flags)) if flags else "full"


@dataclass
class SuiteResult:
    name: str
    report: GradCheckReport


def run_all_combinations(eps: float = 1e-3, tol: float = 1e-4, seed: int = 0) -> list[SuiteResult]:
    results = []
    for flags in flag_combinations():
        results.append(SuiteResult(combo_name(flags), run_tiny_gradcheck(flags, eps, tol, seed)))
    return results
