"""Deterministic synthetic corpora with controllable class separability.

Each role gets a keyword lexicon; users draw each token from their role's
lexicon with probability signal_rate and from a shared background lexicon
otherwise. "regular" users draw purely from the background, so at
signal_rate 0 every class is indistinguishable and at 1.0 (with disjoint
lexicons) the task is perfectly separable.

Two corpora are emitted per run: the seven-class role corpus and a
companion binary corpus whose labels derive from the role mapping
regular -> unverified, everything else -> verified. The binary corpus
samples fresh users with disjoint ids, so a classifier pretrained on it
can legitimately be fine-tuned on the role corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .rng import DEFAULT_SEED, derive
from .text import IDENTITY_LABELS, PUBLIC_FIGURE_LABELS, LabelSet, UserRecord, save_dataset

SPLITS = ("train", "dev", "test")

_BACKGROUND_CORE = (
    "the a an to of and in on for with is are was it my we you they this that "
    "just so very new day time good great back out now here see look make want "
    "go going today really love nice home work life week year people thing"
).split()


@dataclass
class SynthSpec:
    roles: LabelSet = IDENTITY_LABELS
    regular_role: str = "regular"
    users_per_role: dict = field(default_factory=lambda: {"train": 70, "dev": 10, "test": 20})
    pf_users_per_role: dict = field(default_factory=lambda: {"train": 30, "dev": 8, "test": 8})
    regular_multiplier: int = 6
    tweets_range: tuple = (1, 8)
    desc_tokens_range: tuple = (3, 10)
    tweet_tokens_range: tuple = (4, 10)
    keywords_per_role: int = 20
    background_size: int = 60
    signal_rate: float = 0.8
    seed: int = DEFAULT_SEED
    role_lexicons: dict | None = None
    background: list | None = None

    def __post_init__(self):
        if not 0.0 <= self.signal_rate <= 1.0:
            raise ValueError("signal_rate must lie in [0, 1]")
        if self.regular_role not in self.roles:
            raise ValueError(f"{self.regular_role!r} must be one of the roles")
        for table in (self.users_per_role, self.pf_users_per_role):
            if any(v <= 0 for v in table.values()):
                raise ValueError("split sizes must be positive")
        if self.regular_multiplier < 1:
            raise ValueError("regular_multiplier must be >= 1")

    def lexicon_for(self, role: str) -> list[str]:
        if self.role_lexicons is not None:
            return list(self.role_lexicons[role])
        return [f"{role}{i:02d}" for i in range(self.keywords_per_role)]

    def background_lexicon(self) -> list[str]:
        if self.background is not None:
            return list(self.background)
        extra = [f"misc{i:02d}" for i in range(max(0, self.background_size - len(_BACKGROUND_CORE)))]
        return (_BACKGROUND_CORE + extra)[: self.background_size]

    def count_for(self, role: str, split: str, table: dict) -> int:
        base = table[split]
        return base * self.regular_multiplier if role == self.regular_role else base


def _check_lexicons(spec: SynthSpec) -> None:
    background = set(spec.background_lexicon())
    if not background:
        raise ValueError("background lexicon is empty")
    seen: dict[str, str] = {}
    for role in spec.roles.names:
        if role == spec.regular_role:
            continue
        lex = spec.lexicon_for(role)
        if not lex:
            raise ValueError(f"empty lexicon for role {role!r}")
        if spec.signal_rate == 1.0:
            clash = set(lex) & background
            if clash:
                raise ValueError(
                    f"signal_rate=1.0 requires disjoint lexicons; {role!r} shares "
                    f"{sorted(clash)[:3]} with the background"
                )
            for word in lex:
                if word in seen:
                    raise ValueError(
                        f"signal_rate=1.0 requires disjoint lexicons; {word!r} appears "
                        f"in both {seen[word]!r} and {role!r}"
                    )
                seen[word] = role


def _draw_text(rng, n_tokens: int, role_lex, background, signal_rate: float) -> str:
    tokens = []
    for _ in range(n_tokens):
        if role_lex is not None and rng.random() < signal_rate:
            tokens.append(role_lex[rng.integers(0, len(role_lex))])
        else:
            tokens.append(background[rng.integers(0, len(background))])
    return " ".join(tokens)


def _gen_user(spec: SynthSpec, rng, uid: str, role: str, label: str) -> UserRecord:
    role_lex = None if role == spec.regular_role else spec.lexicon_for(role)
    background = spec.background_lexicon()
    lo, hi = spec.desc_tokens_range
    description = _draw_text(rng, int(rng.integers(lo, hi + 1)), role_lex, background, spec.signal_rate)
    tlo, thi = spec.tweets_range
    n_tweets = int(rng.integers(tlo, thi + 1))
    wlo, whi = spec.tweet_tokens_range
    tweets = [
        _draw_text(rng, int(rng.integers(wlo, whi + 1)), role_lex, background, spec.signal_rate)
        for _ in range(n_tweets)
    ]
    return UserRecord(id=uid, description=description, tweets=tweets, label=label)


def gen_corpus(spec: SynthSpec, out_dir) -> dict:
    """Write identity/ and public_figure/ splits plus a manifest; returns it."""
    _check_lexicons(spec)
    out = Path(out_dir)
    manifest = {
        "seed": spec.seed,
        "signal_rate": spec.signal_rate,
        "roles": list(spec.roles.names),
        "counts": {"identity": {}, "public_figure": {}},
    }

    for corpus, table, labeler in (
        ("identity", spec.users_per_role, lambda role: role),
        (
            "public_figure",
            spec.pf_users_per_role,
            lambda role: "unverified" if role == spec.regular_role else "verified",
        ),
    ):
        (out / corpus).mkdir(parents=True, exist_ok=True)
        for split in SPLITS:
            records = []
            counts: dict[str, int] = {}
            serial = 0
            for role in spec.roles.names:
                rng = derive(spec.seed, "synth", corpus, split, role)
                for _ in range(spec.count_for(role, split, table)):
                    uid = f"{'id' if corpus == 'identity' else 'pf'}_{split}_{serial:05d}"
                    serial += 1
                    label = labeler(role)
                    records.append(_gen_user(spec, rng, uid, role, label))
                    counts[label] = counts.get(label, 0) + 1
            save_dataset(records, out / corpus / f"{split}.jsonl")
            manifest["counts"][corpus][split] = dict(sorted(counts.items()))

    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def binary_labels() -> LabelSet:
    return PUBLIC_FIGURE_LABELS
