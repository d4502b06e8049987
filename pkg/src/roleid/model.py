"""Hierarchical self-attention network over a user's description and tweets.

Pipeline per user: word + char-CNN embeddings -> Bi-LSTM -> word-level
multi-head attention and masked row-mean per text, tweet-level attention
over the per-tweet vectors, field-level attention over the two field
vectors, then a softmax classifier. Ablation flags swap individual
attention layers for the identity, drop the char-CNN half (widths
unchanged), or zero out one input field at the fusion stage.

All functions here operate on a whole batch; single users are just B=1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import tensor as T
from . import text as text_mod
from .rng import DEFAULT_SEED, derive
from .tensor import Tensor
from .text import EncodedUser, EncodingConfig, Vocab

logger = logging.getLogger(__name__)

ATTENTION_LAYERS = ("word", "tweet", "field")
CLASSIFIER_PARAMS = ("cls.W", "cls.b")
ABLATION_FLAGS = (
    "no_word_attn",
    "no_tweet_attn",
    "no_field_attn",
    "no_charcnn",
    "no_description",
    "no_tweets",
)

ModelParams = dict[str, Tensor]


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 300  # word-embedding width and per-direction LSTM state size
    char_dim: int = 100
    char_windows: tuple[int, ...] = (3, 4, 5)
    char_maps: tuple[int, ...] = (100, 100, 100)
    heads: int = 6
    num_classes: int = 7
    dropout: float = 0.5
    no_word_attn: bool = False
    no_tweet_attn: bool = False
    no_field_attn: bool = False
    no_charcnn: bool = False
    no_description: bool = False
    no_tweets: bool = False

    def __post_init__(self):
        if self.dim <= 0 or self.char_dim <= 0 or self.num_classes < 2:
            raise ValueError("dim and char_dim must be positive, num_classes >= 2")
        if (2 * self.dim) % self.heads != 0:
            raise ValueError(f"2*dim={2 * self.dim} must be divisible by heads={self.heads}")
        if len(self.char_windows) != len(self.char_maps) or not self.char_windows:
            raise ValueError("char_windows and char_maps must be parallel, nonempty tuples")
        if not self.no_charcnn and sum(self.char_maps) != self.dim:
            raise ValueError(
                f"char feature maps must sum to dim ({self.dim}), got {sum(self.char_maps)}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.no_description and self.no_tweets:
            raise ValueError("no_description and no_tweets together leave no input (degenerate model)")

    @property
    def width(self) -> int:
        return 2 * self.dim

    @property
    def d_k(self) -> int:
        return 2 * self.dim // self.heads

    def with_flags(self, **flags) -> "ModelConfig":
        unknown = set(flags) - set(ABLATION_FLAGS)
        if unknown:
            raise ValueError(f"unknown ablation flags: {sorted(unknown)}")
        return replace(self, **flags)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = dict(d)
        for key in ("char_windows", "char_maps"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def validate_compat(cfg: ModelConfig, enc: EncodingConfig) -> None:
    if not cfg.no_charcnn and enc.word_chars < max(cfg.char_windows):
        raise ValueError(
            f"word_chars={enc.word_chars} is smaller than the widest char filter "
            f"({max(cfg.char_windows)})"
        )


# ---------------------------------------------------------------------------
# parameters


def _xavier(gen: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-limit, limit, size=shape)


def init_params(
    cfg: ModelConfig,
    vocab: Vocab,
    seed: int = DEFAULT_SEED,
    word_emb: np.ndarray | None = None,
) -> ModelParams:
    """Fresh parameter set with stable names and deterministic init.

    All parameters exist regardless of ablation flags so checkpoints stay
    shape-compatible across configurations.
    """
    dt = T.default_dtype()
    d, cd, w2 = cfg.dim, cfg.char_dim, cfg.width

    def tensor(arr):
        return Tensor(np.asarray(arr, dtype=dt), requires_grad=True)

    params: ModelParams = {}
    if word_emb is None:
        word_emb = text_mod.load_pretrained_embeddings(None, vocab, d, seed=seed)
    if word_emb.shape != (vocab.size, d):
        raise ValueError(f"word embedding matrix {word_emb.shape} != {(vocab.size, d)}")
    params["word_emb"] = tensor(word_emb)

    gen = derive(seed, "char-emb")
    char_emb = gen.uniform(-1.0, 1.0, size=(vocab.char_size, cd))
    char_emb[0] = 0.0  # <cpad>
    params["char_emb"] = tensor(char_emb)

    for win, maps in zip(cfg.char_windows, cfg.char_maps):
        gen = derive(seed, "char-cnn", win)
        params[f"char_cnn.w{win}"] = tensor(_xavier(gen, win * cd, maps, (win * cd, maps)))
        params[f"char_cnn.b{win}"] = tensor(np.zeros(maps))

    for direction in ("fwd", "bwd"):
        gen = derive(seed, "lstm", direction)
        params[f"lstm.{direction}.Wx"] = tensor(_xavier(gen, w2, 4 * d, (w2, 4 * d)))
        params[f"lstm.{direction}.Wh"] = tensor(_xavier(gen, d, 4 * d, (d, 4 * d)))
        bias = np.zeros(4 * d)
        bias[d : 2 * d] = 1.0  # forget gate starts open
        params[f"lstm.{direction}.b"] = tensor(bias)

    for layer in ATTENTION_LAYERS:
        for i in range(cfg.heads):
            gen = derive(seed, "attn", layer, i)
            for kind in ("q", "k", "v"):
                params[f"attn.{layer}.{kind}{i}"] = tensor(
                    _xavier(gen, w2, cfg.d_k, (w2, cfg.d_k))
                )
        gen = derive(seed, "attn-out", layer)
        params[f"attn.{layer}.out"] = tensor(
            _xavier(gen, cfg.heads * cfg.d_k, w2, (cfg.heads * cfg.d_k, w2))
        )

    gen = derive(seed, "classifier")
    params["cls.W"] = tensor(_xavier(gen, w2, cfg.num_classes, (cfg.num_classes, w2)))
    params["cls.b"] = tensor(np.zeros(cfg.num_classes))
    return params


def active_param_names(cfg: ModelConfig, params: ModelParams) -> set[str]:
    """Names the forward pass can reach under the config's ablation flags."""
    active = set(params)
    if cfg.no_charcnn:
        active -= {n for n in params if n == "char_emb" or n.startswith("char_cnn.")}
    if cfg.no_word_attn:
        active -= {n for n in params if n.startswith("attn.word.")}
    if cfg.no_tweet_attn or cfg.no_tweets:
        active -= {n for n in params if n.startswith("attn.tweet.")}
    if cfg.no_field_attn:
        active -= {n for n in params if n.startswith("attn.field.")}
    return active


def copy_params(params: ModelParams) -> ModelParams:
    out = {}
    for name, p in params.items():
        t = Tensor(p.data.copy(), requires_grad=p.requires_grad)
        out[name] = t
    return out


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    desc_ids: np.ndarray  # (B, M)
    desc_chars: np.ndarray  # (B, M, K)
    desc_mask: np.ndarray  # (B, M)
    tweet_ids: np.ndarray  # (B, T, N)
    tweet_chars: np.ndarray  # (B, T, N, K)
    tweet_word_mask: np.ndarray  # (B, T, N)
    tweet_mask: np.ndarray  # (B, T)
    labels: np.ndarray  # (B,)

    @property
    def size(self) -> int:
        return self.desc_ids.shape[0]


def collate(users: list[EncodedUser]) -> Batch:
    return Batch(
        desc_ids=np.stack([u.desc_ids for u in users]),
        desc_chars=np.stack([u.desc_chars for u in users]),
        desc_mask=np.stack([u.desc_mask for u in users]),
        tweet_ids=np.stack([u.tweet_ids for u in users]),
        tweet_chars=np.stack([u.tweet_chars for u in users]),
        tweet_word_mask=np.stack([u.tweet_word_mask for u in users]),
        tweet_mask=np.stack([u.tweet_mask for u in users]),
        labels=np.asarray([u.label_id for u in users], dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# forward pieces


def char_cnn_embed(char_ids: np.ndarray, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Per-word character features: conv + relu + max pool per filter bank.

    char_ids is (..., L, K); the result is (..., L, dim) with the filter
    banks' feature maps concatenated.
    """
    k = char_ids.shape[-1]
    if k < max(cfg.char_windows):
        raise ValueError(f"need at least {max(cfg.char_windows)} chars per word, got {k}")
    emb = T.embedding(params["char_emb"], char_ids)  # (..., L, K, cd)
    outputs = []
    for win in cfg.char_windows:
        positions = k - win + 1
        windows = T.concat(
            [T.slice_axis(emb, -2, j, j + positions) for j in range(win)], axis=-1
        )  # (..., L, positions, win*cd)
        feat = T.add(T.matmul(windows, params[f"char_cnn.w{win}"]), params[f"char_cnn.b{win}"])
        outputs.append(T.max_axis(T.relu(feat), axis=-2))  # (..., L, maps)
    return T.concat(outputs, axis=-1)


def embed_tokens(
    word_ids: np.ndarray,
    char_ids: np.ndarray,
    mask: np.ndarray,
    params: ModelParams,
    cfg: ModelConfig,
) -> Tensor:
    """Token vectors [word embedding ; char-CNN embedding], padded rows zeroed."""
    words = T.embedding(params["word_emb"], word_ids)  # (..., L, dim)
    if cfg.no_charcnn:
        chars = Tensor(np.zeros(words.data.shape, dtype=words.data.dtype))
    else:
        chars = char_cnn_embed(char_ids, params, cfg)
    x = T.concat([words, chars], axis=-1)
    maskf = np.expand_dims(mask, -1).astype(x.data.dtype)
    return T.mul(x, Tensor(maskf))


def _lstm_direction(
    x: Tensor, masks: list, params: ModelParams, direction: str, dim: int
) -> list:
    """One directional pass; returns per-step outputs in original order.

    Gate layout in the 4*dim projection is [input, forget, output, cell].
    Masked steps carry the previous state through unchanged and emit a zero
    row, so padding cannot leak into real positions.
    """
    wh = params[f"lstm.{direction}.Wh"]
    # Input projections for every step at once; the loop only adds the
    # recurrent term.
    xw = T.add(T.matmul(x, params[f"lstm.{direction}.Wx"]), params[f"lstm.{direction}.b"])
    batch, length = x.data.shape[0], x.data.shape[1]
    dt = x.data.dtype
    h = Tensor(np.zeros((batch, dim), dtype=dt))
    c = Tensor(np.zeros((batch, dim), dtype=dt))
    steps = range(length) if direction == "fwd" else range(length - 1, -1, -1)
    outputs: list = [None] * length
    for t in steps:
        z = T.add(T.index_axis(xw, 1, t), T.matmul(h, wh))
        gates = T.sigmoid(T.slice_axis(z, 1, 0, 3 * dim))
        i = T.slice_axis(gates, 1, 0, dim)
        f = T.slice_axis(gates, 1, dim, 2 * dim)
        o = T.slice_axis(gates, 1, 2 * dim, 3 * dim)
        g = T.tanh(T.slice_axis(z, 1, 3 * dim, 4 * dim))
        c_new = T.add(T.mul(f, c), T.mul(i, g))
        h_new = T.mul(o, T.tanh(c_new))
        if masks[t] is None:
            c, h = c_new, h_new
            outputs[t] = h_new
        else:
            m, keep = masks[t]
            c = T.add(T.mul(m, c_new), T.mul(keep, c))
            h = T.add(T.mul(m, h_new), T.mul(keep, h))
            outputs[t] = T.mul(m, h_new)
    return outputs


def bilstm_encode(x: Tensor, mask: np.ndarray, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """(B, L, 2*dim) -> (B, L, 2*dim): [forward states ; backward states]."""
    dt = x.data.dtype
    maskf = mask.astype(dt)
    # Columns that are fully real need no mask arithmetic at all.
    masks = [
        None
        if mask[:, t].all()
        else (Tensor(maskf[:, t : t + 1]), Tensor(1.0 - maskf[:, t : t + 1]))
        for t in range(mask.shape[1])
    ]
    fwd = _lstm_direction(x, masks, params, "fwd", cfg.dim)
    bwd = _lstm_direction(x, masks, params, "bwd", cfg.dim)
    return T.concat([T.stack(fwd, axis=1), T.stack(bwd, axis=1)], axis=-1)


def multi_head_attention(
    h: Tensor,
    key_mask: np.ndarray | None,
    layer: str,
    params: ModelParams,
    cfg: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    trace: dict | None = None,
    trace_key: str | None = None,
) -> Tensor:
    """Scaled dot-product attention over rows of h, h heads concatenated.

    Masked key columns are excluded from every softmax; the head-averaged
    attention matrices are stashed in `trace` when requested (used for the
    importance report, eval mode only).
    """
    scale = 1.0 / math.sqrt(cfg.d_k)
    mask_b = None if key_mask is None else np.expand_dims(key_mask, -2)
    heads = []
    attn_sum = None
    for i in range(cfg.heads):
        q = T.matmul(h, params[f"attn.{layer}.q{i}"])
        k = T.matmul(h, params[f"attn.{layer}.k{i}"])
        v = T.matmul(h, params[f"attn.{layer}.v{i}"])
        scores = T.mul(T.matmul(q, T.transpose_last(k)), scale)
        attn = T.masked_softmax(scores, axis=-1, mask=mask_b)
        if trace is not None:
            attn_sum = attn.data.copy() if attn_sum is None else attn_sum + attn.data
        attn = T.dropout(attn, cfg.dropout, training, rng)
        heads.append(T.matmul(attn, v))
    if trace is not None and trace_key is not None:
        trace[trace_key] = attn_sum / cfg.heads
    return T.matmul(T.concat(heads, axis=-1), params[f"attn.{layer}.out"])


def _patch_empty_rows(mask: np.ndarray) -> np.ndarray:
    """Mark position 0 in all-False rows so softmax stays defined.

    Downstream masked means still use the original mask, so patched rows
    contribute exact zeros.
    """
    empty = ~mask.any(axis=-1)
    if not empty.any():
        return mask
    patched = mask.copy()
    patched[empty, ..., 0] = True
    return patched


def desc_embedded(
    batch: Batch,
    params: ModelParams,
    cfg: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    x = embed_tokens(batch.desc_ids, batch.desc_chars, batch.desc_mask, params, cfg)
    return T.dropout(x, cfg.dropout, training, rng)


def desc_pooled(
    h: Tensor,
    batch: Batch,
    params: ModelParams,
    cfg: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    trace: dict | None = None,
) -> Tensor:
    mask = batch.desc_mask
    if cfg.no_word_attn:
        attended = h
    else:
        attended = multi_head_attention(
            h, _patch_empty_rows(mask), "word", params, cfg, training, rng, trace, "word_desc"
        )
    return T.masked_mean_rows(attended, mask)


def encode_description(
    batch: Batch,
    params: ModelParams,
    cfg: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    trace: dict | None = None,
) -> Tensor:
    """Word pipeline over the description field -> (B, 2*dim)."""
    empty = ~batch.desc_mask.any(axis=-1)
    if empty.any():
        logger.warning(
            "%d of %d users have an empty description; their description vector is zero",
            int(empty.sum()),
            batch.size,
        )
    x = desc_embedded(batch, params, cfg, training, rng)
    h = bilstm_encode(x, batch.desc_mask, params, cfg)
    return desc_pooled(h, batch, params, cfg, training, rng, trace)


def tweets_embedded(
    batch: Batch,
    params: ModelParams,
    cfg: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    b, t, n = batch.tweet_ids.shape
    x = embed_tokens(
        batch.tweet_ids.reshape(b * t, n),
        batch.tweet_chars.reshape(b * t, n, -1),
        batch.tweet_word_mask.reshape(b * t, n),
        params,
        cfg,
    )
    return T.dropout(x, cfg.dropout, training, rng)


def tweets_pooled(
    h: Tensor,
    batch: Batch,
    params: ModelParams,
    cfg: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    trace: dict | None = None,
) -> Tensor:
    b, t, n = batch.tweet_ids.shape
    word_mask = batch.tweet_word_mask.reshape(b * t, n)
    if cfg.no_word_attn:
        attended = h
    else:
        attended = multi_head_attention(
            h, _patch_empty_rows(word_mask), "word", params, cfg, training, rng, trace, "word_tweets"
        )
    per_tweet = T.masked_mean_rows(attended, word_mask)  # (B*T, 2*dim), zeros for empty tweets
    stacked = T.reshape(per_tweet, (b, t, cfg.width))
    if cfg.no_tweet_attn:
        mixed = stacked
    else:
        mixed = multi_head_attention(
            stacked,
            _patch_empty_rows(batch.tweet_mask),
            "tweet",
            params,
            cfg,
            training,
            rng,
            trace,
            "tweet",
        )
    return T.masked_mean_rows(mixed, batch.tweet_mask)


def encode_tweets(
    batch: Batch,
    params: ModelParams,
    cfg: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    trace: dict | None = None,
) -> Tensor:
    """Shared word pipeline per tweet, then tweet-level attention -> (B, 2*dim)."""
    no_tweet_users = ~batch.tweet_mask.any(axis=-1)
    if no_tweet_users.any():
        logger.warning(
            "%d of %d users have no usable tweets; their tweets vector is zero",
            int(no_tweet_users.sum()),
            batch.size,
        )
    x = tweets_embedded(batch, params, cfg, training, rng)
    h = bilstm_encode(x, batch.tweet_word_mask.reshape(x.data.shape[0], -1), params, cfg)
    return tweets_pooled(h, batch, params, cfg, training, rng, trace)


def fuse_fields(
    r_desc: Tensor,
    r_tweets: Tensor,
    params: ModelParams,
    cfg: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    trace: dict | None = None,
) -> Tensor:
    """Field attention over the 2-row stack [description; tweets] -> (B, 2*dim)."""
    stacked = T.stack([r_desc, r_tweets], axis=1)  # (B, 2, 2*dim)
    if cfg.no_field_attn:
        mixed = stacked
    else:
        mixed = multi_head_attention(
            stacked, None, "field", params, cfg, training, rng, trace, "field"
        )
    both = np.ones(stacked.data.shape[:-1], dtype=bool)
    return T.masked_mean_rows(mixed, both)


def classify(r_f: Tensor, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Affine projection and softmax -> (logits, probabilities), each (B, |C|)."""
    logits = T.add(T.matmul(r_f, T.transpose_last(params["cls.W"])), params["cls.b"])
    return logits, T.masked_softmax(logits, axis=-1)


def cross_entropy(probs: Tensor, label_ids: np.ndarray) -> Tensor:
    """Mean negative log-likelihood; probabilities clamped at 1e-12."""
    p = probs if probs.ndim == 2 else T.reshape(probs, (1, -1))
    labels = np.atleast_1d(np.asarray(label_ids))
    onehot = np.zeros(p.data.shape, dtype=p.data.dtype)
    onehot[np.arange(labels.size), labels] = 1.0
    picked = T.sum_axis(T.mul(p, Tensor(onehot)), axis=-1)
    nll = T.mul(T.log(T.clip_min(picked, 1e-12)), -1.0)
    return T.mul(T.sum_all(nll), 1.0 / labels.size)


def forward(
    batch: Batch,
    params: ModelParams,
    cfg: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    trace: dict | None = None,
) -> tuple[Tensor, Tensor]:
    """Whole-model pass -> (logits, probabilities). mode is 'train' or 'eval'."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    if training and cfg.dropout > 0 and rng is None:
        raise ValueError("training mode requires an rng for dropout")
    dt = T.default_dtype()
    zeros = np.zeros((batch.size, cfg.width), dtype=dt)
    r_desc = (
        Tensor(zeros)
        if cfg.no_description
        else encode_description(batch, params, cfg, training, rng, trace)
    )
    r_tweets = (
        Tensor(zeros.copy())
        if cfg.no_tweets
        else encode_tweets(batch, params, cfg, training, rng, trace)
    )
    r_f = fuse_fields(r_desc, r_tweets, params, cfg, training, rng, trace)
    return classify(r_f, params)
