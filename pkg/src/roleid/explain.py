"""Approximate attention-importance reports and their HTML rendering.

Interpreting multi-head attention weights directly is awkward, so the
importance of a position is approximated by averaging the attention
matrices over heads and then averaging each key's received weight over
the (unmasked) query rows, renormalized over unmasked positions. With an
attention level ablated to identity, every unmasked position contributes
equally and the report says so with uniform weights.
"""

from __future__ import annotations

import html
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import ModelConfig, ModelParams, collate, forward
from .text import EncodedUser, EncodingConfig, LabelSet, UserRecord, Vocab, encode_user


@dataclass
class AttentionReport:
    desc_weights: np.ndarray  # (real desc tokens,)
    tweet_weights: np.ndarray  # (real tweets,)
    tweet_word_weights: list[np.ndarray]  # per real tweet: (real tokens,)


def _key_importance(attn: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Head-averaged matrix (L, L) -> per-key weights over unmasked positions."""
    keep = np.flatnonzero(mask)
    if keep.size == 0:
        return np.zeros(0)
    received = attn[np.ix_(keep, keep)].mean(axis=0)
    total = received.sum()
    return received / total if total > 0 else np.full(keep.size, 1.0 / keep.size)


def _uniform(mask: np.ndarray) -> np.ndarray:
    n = int(mask.sum())
    return np.full(n, 1.0 / n) if n else np.zeros(0)


def attention_importance(user: EncodedUser, params: ModelParams, cfg: ModelConfig) -> AttentionReport:
    """Importance weights for one user's words and tweets (eval mode)."""
    batch = collate([user])
    trace: dict = {}
    with T.no_grad():
        forward(batch, params, cfg, mode="eval", trace=trace)

    if cfg.no_description or not user.desc_mask.any():
        desc_weights = _uniform(user.desc_mask)
    elif cfg.no_word_attn:
        desc_weights = _uniform(user.desc_mask)
    else:
        desc_weights = _key_importance(trace["word_desc"][0], user.desc_mask)

    real_tweets = np.flatnonzero(user.tweet_mask)
    tweet_word_weights = []
    if not cfg.no_tweets:
        for j in real_tweets:
            wmask = user.tweet_word_mask[j]
            if cfg.no_word_attn:
                tweet_word_weights.append(_uniform(wmask))
            else:
                tweet_word_weights.append(_key_importance(trace["word_tweets"][j], wmask))
        if cfg.no_tweet_attn or real_tweets.size == 0:
            tweet_weights = _uniform(user.tweet_mask)
        else:
            tweet_weights = _key_importance(trace["tweet"][0], user.tweet_mask)
    else:
        tweet_weights = np.zeros(0)
    return AttentionReport(desc_weights, tweet_weights, tweet_word_weights)


def explain_user(
    record: UserRecord,
    vocab: Vocab,
    enc: EncodingConfig,
    labels: LabelSet,
    params: ModelParams,
    cfg: ModelConfig,
) -> dict:
    """Serializable importance report with tokens attached."""
    from .text import tokenize

    user = encode_user(record, vocab, enc, labels)
    report = attention_importance(user, params, cfg)
    _, probs = forward(collate([user]), params, cfg, mode="eval")
    pred = int(np.argmax(probs.data[0]))
    desc_tokens = tokenize(record.description)[: enc.desc_tokens]
    out = {
        "id": record.id,
        "label": record.label,
        "predicted": labels.names[pred],
        "probabilities": {name: float(p) for name, p in zip(labels.names, probs.data[0])},
        "description": {
            "tokens": desc_tokens,
            "weights": [float(w) for w in report.desc_weights],
        },
        "tweets": [],
    }
    real = np.flatnonzero(user.tweet_mask)
    for rank, j in enumerate(real):
        tokens = tokenize(record.tweets[j])[: enc.tweet_tokens]
        out["tweets"].append(
            {
                "index": int(j),
                "weight": float(report.tweet_weights[rank]) if report.tweet_weights.size else 0.0,
                "tokens": tokens,
                "word_weights": [float(w) for w in report.tweet_word_weights[rank]],
            }
        )
    return out


def _span(token: str, weight: float, peak: float) -> str:
    alpha = 0.0 if peak <= 0 else min(weight / peak, 1.0)
    return (
        f'<span style="background-color: rgba(255,110,0,{alpha:.3f}); '
        f'padding:1px 3px; margin:1px; border-radius:3px;">{html.escape(token)}</span>'
    )


def render_html(explained: dict) -> str:
    """Static heatmap: word intensity per token, tweet intensity per header."""
    parts = [
        "<!DOCTYPE html><html><head><meta charset='utf-8'>",
        "<title>attention report</title>",
        "<style>body{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.9}</style>",
        "</head><body>",
        f"<h2>user {html.escape(explained['id'])}</h2>",
        f"<p>gold label <b>{html.escape(explained['label'])}</b>, "
        f"predicted <b>{html.escape(explained['predicted'])}</b></p>",
    ]
    desc = explained["description"]
    peak = max(desc["weights"], default=0.0)
    parts.append("<h3>description</h3><p>")
    parts.extend(_span(t, w, peak) for t, w in zip(desc["tokens"], desc["weights"]))
    parts.append("</p><h3>tweets</h3>")
    tweet_peak = max((t["weight"] for t in explained["tweets"]), default=0.0)
    for tweet in explained["tweets"]:
        head = _span(f"tweet {tweet['index'] + 1}", tweet["weight"], tweet_peak)
        parts.append(f"<p>{head} ")
        peak = max(tweet["word_weights"], default=0.0)
        parts.extend(_span(t, w, peak) for t, w in zip(tweet["tokens"], tweet["word_weights"]))
        parts.append("</p>")
    parts.append("</body></html>")
    return "".join(parts)
