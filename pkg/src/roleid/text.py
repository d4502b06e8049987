"""Tokenization, vocabularies, dataset files, and fixed-shape user encoding.

A user record is one description plus up to T short posts ("tweets").
Encoding pads/truncates everything to the shapes in EncodingConfig and
carries boolean masks so downstream code never has to guess which
positions are real.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .tensor import default_dtype

PAD, UNK, URL_TOK, MENTION_TOK = "<pad>", "<unk>", "<url>", "<user>"
WORD_SPECIALS = (PAD, UNK, URL_TOK, MENTION_TOK)
CPAD, CUNK = "<cpad>", "<cunk>"
CHAR_SPECIALS = (CPAD, CUNK)

# Printable ASCII minus whitespace; tokens never contain whitespace.
PRINTABLE_CHARSET = "".join(chr(c) for c in range(33, 127))

_URL_RE = re.compile(r"(?:https?://|www\.)\S+")
_MENTION_RE = re.compile(r"@\w+")
_HASHTAG_RE = re.compile(r"#(\w+)")
_TOKEN_RE = re.compile(r"<url>|<user>|\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, normalize URLs/mentions/hashtags, split punctuation."""
    text = text.lower()
    text = _URL_RE.sub(" <url> ", text)
    text = _MENTION_RE.sub(" <user> ", text)
    text = _HASHTAG_RE.sub(r" \1 ", text)
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class LabelSet:
    """Ordered class names; order is the class-index order everywhere."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate label names in {self.names}")
        if not self.names:
            raise ValueError("LabelSet needs at least one class")

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self.names

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown label {name!r}; expected one of {list(self.names)}") from None


IDENTITY_LABELS = LabelSet(
    ("regular", "media", "celebrity", "sport", "company", "government", "reporter")
)
PUBLIC_FIGURE_LABELS = LabelSet(("verified", "unverified"))


@dataclass(frozen=True)
class EncodingConfig:
    """Fixed shapes: M description tokens, N tokens per tweet, T tweets, K chars."""

    desc_tokens: int = 30  # M
    tweet_tokens: int = 32  # N
    tweets: int = 20  # T
    word_chars: int = 20  # K

    def __post_init__(self):
        for name in ("desc_tokens", "tweet_tokens", "tweets", "word_chars"):
            if getattr(self, name) <= 0:
                raise ValueError(f"EncodingConfig.{name} must be positive")


@dataclass
class UserRecord:
    id: str
    description: str
    tweets: list[str]
    label: str


class Vocab:
    """Frozen word and character index maps with specials up front."""

    def __init__(self, words: list[str], charset: str = PRINTABLE_CHARSET):
        for i, special in enumerate(WORD_SPECIALS):
            if words[: len(WORD_SPECIALS)][i] != special:
                raise ValueError(f"vocab word list must start with specials {WORD_SPECIALS}")
        if len(set(words)) != len(words):
            raise ValueError("duplicate tokens in vocab word list")
        if len(set(charset)) != len(charset):
            raise ValueError("duplicate characters in charset")
        self.words = tuple(words)
        self.charset = charset
        self._word_index = {w: i for i, w in enumerate(self.words)}
        self._char_index = {c: i + len(CHAR_SPECIALS) for i, c in enumerate(charset)}

    @property
    def size(self) -> int:
        return len(self.words)

    @property
    def char_size(self) -> int:
        return len(self.charset) + len(CHAR_SPECIALS)

    def word_id(self, token: str) -> int:
        return self._word_index.get(token, 1)

    def char_id(self, ch: str) -> int:
        return self._char_index.get(ch, 1)

    def fingerprint(self) -> str:
        blob = "\x00".join(self.words) + "\x01" + self.charset
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @classmethod
    def build(
        cls,
        corpus: list[UserRecord],
        min_freq: int = 2,
        charset: str = PRINTABLE_CHARSET,
    ) -> "Vocab":
        """Count tokens over descriptions and tweets, threshold, sort.

        Order is corpus frequency descending then lexicographic, so two
        builds from the same corpus give identical index maps.
        """
        if min_freq < 1:
            raise ValueError("min_freq must be >= 1")
        if not corpus:
            raise ValueError("cannot build a vocabulary from an empty corpus")
        counts: dict[str, int] = {}
        for user in corpus:
            for text in [user.description, *user.tweets]:
                for token in tokenize(text):
                    if token in WORD_SPECIALS:
                        continue
                    counts[token] = counts.get(token, 0) + 1
        kept = sorted(
            (w for w, c in counts.items() if c >= min_freq),
            key=lambda w: (-counts[w], w),
        )
        return cls([*WORD_SPECIALS, *kept], charset=charset)

    def save(self, path) -> None:
        """Word table as token<TAB>index lines (specials first), then a
        '#chars' section with codepoint<TAB>index lines."""
        lines = [f"{w}\t{i}" for i, w in enumerate(self.words)]
        lines.append("#chars")
        lines.append(f"{CPAD}\t0")
        lines.append(f"{CUNK}\t1")
        lines.extend(f"{ord(c)}\t{i + 2}" for i, c in enumerate(self.charset))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        words: list[str] = []
        chars: list[str] = []
        in_chars = False
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            if line == "#chars":
                in_chars = True
                continue
            try:
                token, index = line.rsplit("\t", 1)
                index = int(index)
            except ValueError:
                raise ValueError(f"{path}: malformed vocab line {lineno}: {line!r}") from None
            if in_chars:
                if token in CHAR_SPECIALS:
                    continue
                chars.append(chr(int(token)))
            else:
                if index != len(words):
                    raise ValueError(f"{path}: non-dense word index at line {lineno}")
                words.append(token)
        return cls(words, charset="".join(chars))


@dataclass
class EncodedUser:
    """Padded index arrays plus masks for one user."""

    desc_ids: np.ndarray  # (M,) int32
    desc_chars: np.ndarray  # (M, K) int32
    desc_mask: np.ndarray  # (M,) bool
    tweet_ids: np.ndarray  # (T, N) int32
    tweet_chars: np.ndarray  # (T, N, K) int32
    tweet_word_mask: np.ndarray  # (T, N) bool
    tweet_mask: np.ndarray  # (T,) bool
    label_id: int


def _encode_tokens(tokens: list[str], vocab: Vocab, length: int, k: int):
    ids = np.zeros(length, dtype=np.int32)
    chars = np.zeros((length, k), dtype=np.int32)
    mask = np.zeros(length, dtype=bool)
    for i, token in enumerate(tokens[:length]):
        ids[i] = vocab.word_id(token)
        mask[i] = True
        for j, ch in enumerate(token[:k]):
            chars[i, j] = vocab.char_id(ch)
    return ids, chars, mask


def encode_user(user: UserRecord, vocab: Vocab, cfg: EncodingConfig, labels: LabelSet) -> EncodedUser:
    label_id = labels.index(user.label)
    desc_ids, desc_chars, desc_mask = _encode_tokens(
        tokenize(user.description), vocab, cfg.desc_tokens, cfg.word_chars
    )
    t, n, k = cfg.tweets, cfg.tweet_tokens, cfg.word_chars
    tweet_ids = np.zeros((t, n), dtype=np.int32)
    tweet_chars = np.zeros((t, n, k), dtype=np.int32)
    tweet_word_mask = np.zeros((t, n), dtype=bool)
    tweet_mask = np.zeros(t, dtype=bool)
    for i, tweet in enumerate(user.tweets[:t]):
        ids, chars, mask = _encode_tokens(tokenize(tweet), vocab, n, k)
        tweet_ids[i] = ids
        tweet_chars[i] = chars
        tweet_word_mask[i] = mask
        # A tweet that tokenizes to nothing carries no content: keep it masked.
        tweet_mask[i] = bool(mask.any())
    return EncodedUser(
        desc_ids, desc_chars, desc_mask, tweet_ids, tweet_chars, tweet_word_mask, tweet_mask, label_id
    )


def load_dataset(path, labels: LabelSet, cfg: EncodingConfig) -> list[UserRecord]:
    """Read line-delimited JSON user records, validating as we go."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid record ({exc.msg})") from None
            for field_name, kind in (("id", str), ("description", str), ("label", str), ("tweets", list)):
                if field_name not in obj:
                    raise ValueError(f"{path}: line {lineno}: missing field {field_name!r}")
                if not isinstance(obj[field_name], kind):
                    raise ValueError(f"{path}: line {lineno}: field {field_name!r} has wrong type")
            if any(not isinstance(t, str) for t in obj["tweets"]):
                raise ValueError(f"{path}: line {lineno}: tweets must all be strings")
            if obj["label"] not in labels:
                raise ValueError(
                    f"{path}: line {lineno}: unknown label {obj['label']!r}; "
                    f"expected one of {list(labels.names)}"
                )
            records.append(
                UserRecord(
                    id=obj["id"],
                    description=obj["description"],
                    tweets=obj["tweets"][: cfg.tweets],
                    label=obj["label"],
                )
            )
    return records


def save_dataset(records: list[UserRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {"id": r.id, "description": r.description, "tweets": r.tweets, "label": r.label},
                    sort_keys=True,
                )
                + "\n"
            )


def load_pretrained_embeddings(path, vocab: Vocab, dim: int, seed: int = rng_mod.DEFAULT_SEED) -> np.ndarray:
    """Build the (V, dim) word-embedding init matrix.

    Rows for words found in the text file are copied verbatim; everything
    else is drawn from U(-0.25, 0.25) with the derived RNG, and the <pad>
    row is zeroed. With no file at all, only the random path runs.
    """
    gen = rng_mod.derive(seed, "word-emb-init")
    matrix = gen.uniform(-0.25, 0.25, size=(vocab.size, dim)).astype(default_dtype())
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split(" ")
                if len(parts) < 2:
                    continue
                token, values = parts[0], parts[1:]
                if len(values) != dim:
                    raise ValueError(
                        f"{path}: line {lineno}: expected {dim} values for {token!r}, got {len(values)}"
                    )
                if token in vocab._word_index:
                    matrix[vocab._word_index[token]] = np.asarray(
                        [float(v) for v in values], dtype=default_dtype()
                    )
    matrix[0] = 0.0  # <pad>
    return matrix
