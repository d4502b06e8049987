"""Shared tiny-model fixtures and independent numerical oracles.

The oracles here are deliberately written as naive per-element loops in
plain numpy, so they share no code path with the vectorized autodiff
implementation they verify.
"""

import numpy as np

from roleid.model import Batch, ModelConfig, collate, init_params
from roleid.text import EncodingConfig, LabelSet, UserRecord, Vocab, encode_user

TINY_LABELS = LabelSet(("alpha", "beta", "gamma"))


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        dim=4,
        char_dim=3,
        char_windows=(2,),
        char_maps=(4,),
        heads=2,
        num_classes=3,
        dropout=0.0,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_enc(**overrides) -> EncodingConfig:
    base = dict(desc_tokens=3, tweet_tokens=3, tweets=2, word_chars=4)
    base.update(overrides)
    return EncodingConfig(**base)


TINY_TEXTS = [
    UserRecord("t0", "ax by cz", ["dq ex", "fy gz ax"], "alpha"),
    UserRecord("t1", "by dq", ["cz", "ax ax"], "beta"),
    UserRecord("t2", "gz", ["ex fy"], "gamma"),
]


def tiny_vocab() -> Vocab:
    charset = "abcdefgqxyz"
    return Vocab.build(TINY_TEXTS, min_freq=1, charset=charset)


def tiny_batch(vocab=None, enc=None, labels=TINY_LABELS) -> Batch:
    vocab = vocab or tiny_vocab()
    enc = enc or tiny_enc()
    return collate([encode_user(u, vocab, enc, labels) for u in TINY_TEXTS])


def tiny_params(cfg=None, vocab=None, seed=3):
    cfg = cfg or tiny_config()
    vocab = vocab or tiny_vocab()
    return init_params(cfg, vocab, seed=seed)


# --- oracles ------------------------------------------------------------------


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def char_cnn_ref(char_ids, char_emb, filters):
    """filters: list of (window_width, weight (win*cd, maps), bias (maps,))."""
    length, k = char_ids.shape
    emb = char_emb[char_ids]
    pieces = []
    for win, weight, bias in filters:
        maps = weight.shape[1]
        feats = np.zeros((length, maps))
        for l in range(length):
            for m in range(maps):
                best = -np.inf
                for p in range(k - win + 1):
                    window = emb[l, p : p + win].reshape(-1)
                    best = max(best, max(0.0, float(window @ weight[:, m] + bias[m])))
                feats[l, m] = best
        pieces.append(feats)
    return np.concatenate(pieces, axis=-1)


def lstm_ref_direction(x, mask, wx, wh, b, dim, reverse):
    # Gate layout [input, forget, output, cell] matches the implementation.
    batch, length, _ = x.shape
    out = np.zeros((batch, length, dim))
    for s in range(batch):
        h = np.zeros(dim)
        c = np.zeros(dim)
        order = range(length - 1, -1, -1) if reverse else range(length)
        for t in order:
            if not mask[s, t]:
                continue  # state carries over, output row stays zero
            z = x[s, t] @ wx + h @ wh + b
            gi = _sig(z[0:dim])
            gf = _sig(z[dim : 2 * dim])
            go = _sig(z[2 * dim : 3 * dim])
            gg = np.tanh(z[3 * dim : 4 * dim])
            c = gf * c + gi * gg
            h = go * np.tanh(c)
            out[s, t] = h
    return out


def bilstm_ref(x, mask, params, dim):
    fwd = lstm_ref_direction(
        x, mask, params["lstm.fwd.Wx"].data, params["lstm.fwd.Wh"].data, params["lstm.fwd.b"].data, dim, False
    )
    bwd = lstm_ref_direction(
        x, mask, params["lstm.bwd.Wx"].data, params["lstm.bwd.Wh"].data, params["lstm.bwd.b"].data, dim, True
    )
    return np.concatenate([fwd, bwd], axis=-1)


def mha_ref(h, key_mask, heads_qkv, w_out, d_k):
    """Single sequence (L, W). heads_qkv: list of (Wq, Wk, Wv)."""
    length = h.shape[0]
    outs = []
    for wq, wk, wv in heads_qkv:
        q, k, v = h @ wq, h @ wk, h @ wv
        scores = q @ k.T / np.sqrt(d_k)
        attn = np.zeros((length, length))
        for r in range(length):
            cols = np.where(key_mask)[0] if key_mask is not None else np.arange(length)
            row = scores[r, cols]
            e = np.exp(row - row.max())
            attn[r, cols] = e / e.sum()
        outs.append(attn @ v)
    return np.concatenate(outs, axis=-1) @ w_out


def mha_ref_params(h, key_mask, layer, params, cfg):
    heads_qkv = [
        (
            params[f"attn.{layer}.q{i}"].data,
            params[f"attn.{layer}.k{i}"].data,
            params[f"attn.{layer}.v{i}"].data,
        )
        for i in range(cfg.heads)
    ]
    return mha_ref(h, key_mask, heads_qkv, params[f"attn.{layer}.out"].data, cfg.d_k)


def masked_mean_ref(rows, mask):
    if not mask.any():
        return np.zeros(rows.shape[-1])
    return rows[mask].mean(axis=0)


def embed_ref(word_ids, char_ids, mask, params, cfg):
    words = params["word_emb"].data[word_ids]
    if cfg.no_charcnn:
        chars = np.zeros_like(words)
    else:
        filters = [
            (w, params[f"char_cnn.w{w}"].data, params[f"char_cnn.b{w}"].data)
            for w in cfg.char_windows
        ]
        chars = char_cnn_ref(char_ids, params["char_emb"].data, filters)
    x = np.concatenate([words, chars], axis=-1)
    return x * mask[:, None]


def forward_ref(batch, params, cfg):
    """Composed oracle for the full eval-mode forward of one batch."""
    dim, width = cfg.dim, cfg.width
    out_logits = []
    for s in range(batch.size):
        if cfg.no_description:
            r_d = np.zeros(width)
        else:
            x = embed_ref(batch.desc_ids[s], batch.desc_chars[s], batch.desc_mask[s], params, cfg)
            h = bilstm_ref(x[None], batch.desc_mask[s][None], params, dim)[0]
            if cfg.no_word_attn:
                a = h
            else:
                key = batch.desc_mask[s]
                key = key if key.any() else np.eye(1, len(key), 0, dtype=bool)[0]
                a = mha_ref_params(h, key, "word", params, cfg)
            r_d = masked_mean_ref(a, batch.desc_mask[s])
        if cfg.no_tweets:
            r_t = np.zeros(width)
        else:
            rows = []
            for j in range(batch.tweet_ids.shape[1]):
                wmask = batch.tweet_word_mask[s, j]
                x = embed_ref(batch.tweet_ids[s, j], batch.tweet_chars[s, j], wmask, params, cfg)
                h = bilstm_ref(x[None], wmask[None], params, dim)[0]
                if cfg.no_word_attn:
                    a = h
                else:
                    key = wmask if wmask.any() else np.eye(1, len(wmask), 0, dtype=bool)[0]
                    a = mha_ref_params(h, key, "word", params, cfg)
                rows.append(masked_mean_ref(a, wmask))
            stacked = np.stack(rows)
            tmask = batch.tweet_mask[s]
            if cfg.no_tweet_attn:
                mixed = stacked
            else:
                key = tmask if tmask.any() else np.eye(1, len(tmask), 0, dtype=bool)[0]
                mixed = mha_ref_params(stacked, key, "tweet", params, cfg)
            r_t = masked_mean_ref(mixed, tmask)
        pair = np.stack([r_d, r_t])
        if cfg.no_field_attn:
            fused = pair
        else:
            fused = mha_ref_params(pair, None, "field", params, cfg)
        r_f = fused.mean(axis=0)
        out_logits.append(params["cls.W"].data @ r_f + params["cls.b"].data)
    return np.stack(out_logits)
