"""Classical bag-of-words baselines.

All of them consume one document per user: the description and every
tweet concatenated. The SVM stand-in is a Crammer-Singer hinge trained
with SGD on tf-idf features; the fastText stand-in is a softmax linear
model over mean one-hot (relative frequency) features. Both are primal
SGD approximations of the originals, and reports label them as such.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import derive
from .text import UserRecord, tokenize


def user_document(record: UserRecord) -> list[str]:
    tokens = tokenize(record.description)
    for tweet in record.tweets:
        tokens.extend(tokenize(tweet))
    return tokens


# --- tf-idf --------------------------------------------------------------------


@dataclass
class TfidfModel:
    terms: dict[str, int]  # term -> column, frozen after fit
    idf: np.ndarray  # (F,)
    ngram_max: int = 1

    @property
    def width(self) -> int:
        return len(self.terms)


def _ngrams(tokens: list[str], ngram_max: int) -> list[str]:
    out = list(tokens)
    if ngram_max >= 2:
        out.extend(" ".join(pair) for pair in zip(tokens, tokens[1:]))
    return out


def tfidf_fit(docs: list[list[str]], ngram_max: int = 1) -> TfidfModel:
    """idf(t) = ln((1+n)/(1+df(t))) + 1 over the fit corpus."""
    if not docs:
        raise ValueError("cannot fit tf-idf on an empty corpus")
    if ngram_max not in (1, 2):
        raise ValueError("ngram_max must be 1 or 2")
    df: dict[str, int] = {}
    for doc in docs:
        for term in set(_ngrams(doc, ngram_max)):
            df[term] = df.get(term, 0) + 1
    terms = {t: i for i, t in enumerate(sorted(df))}
    n = len(docs)
    idf = np.zeros(len(terms))
    for t, i in terms.items():
        idf[i] = math.log((1 + n) / (1 + df[t])) + 1.0
    return TfidfModel(terms, idf, ngram_max)


def tfidf_transform(model: TfidfModel, docs: list[list[str]]) -> np.ndarray:
    """Raw counts times idf, rows L2-normalized; unseen terms are ignored."""
    x = np.zeros((len(docs), model.width))
    for r, doc in enumerate(docs):
        for term in _ngrams(doc, model.ngram_max):
            col = model.terms.get(term)
            if col is not None:
                x[r, col] += 1.0
    x *= model.idf
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    np.divide(x, norms, out=x, where=norms > 0)
    return x


def tfidf_fit_transform(docs: list[list[str]], ngram_max: int = 1) -> tuple[TfidfModel, np.ndarray]:
    model = tfidf_fit(docs, ngram_max)
    return model, tfidf_transform(model, docs)


def bow_features(docs: list[list[str]], terms: dict[str, int] | None = None) -> tuple[dict[str, int], np.ndarray]:
    """Mean one-hot features: term relative frequencies per document."""
    if terms is None:
        seen = sorted({t for doc in docs for t in doc})
        terms = {t: i for i, t in enumerate(seen)}
    x = np.zeros((len(docs), len(terms)))
    for r, doc in enumerate(docs):
        kept = [terms[t] for t in doc if t in terms]
        for col in kept:
            x[r, col] += 1.0
        if kept:
            x[r] /= len(doc)
    return terms, x


# --- multinomial naive Bayes ------------------------------------------------------


@dataclass
class MnbModel:
    log_priors: np.ndarray  # (C,)
    log_likelihood: np.ndarray  # (C, F), rows of exp sum to 1
    alpha: float


def mnb_fit(x: np.ndarray, y: np.ndarray, num_classes: int, alpha: float = 1e-4) -> MnbModel:
    """Additive-smoothing multinomial NB over (possibly fractional) masses."""
    if alpha <= 0:
        raise ValueError("smoothing alpha must be positive")
    if (x < 0).any():
        raise ValueError("multinomial NB requires nonnegative features")
    y = np.asarray(y)
    counts = np.bincount(y, minlength=num_classes)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"classes absent from the training set: {missing.tolist()}")
    n, f = x.shape
    log_priors = np.log(counts / n)
    log_likelihood = np.zeros((num_classes, f))
    for c in range(num_classes):
        mass = x[y == c].sum(axis=0) + alpha
        log_likelihood[c] = np.log(mass / mass.sum())
    return MnbModel(log_priors, log_likelihood, alpha)


def mnb_log_posterior(model: MnbModel, x: np.ndarray) -> np.ndarray:
    return model.log_priors + x @ model.log_likelihood.T


def mnb_predict_proba(model: MnbModel, x: np.ndarray) -> np.ndarray:
    scores = mnb_log_posterior(model, x)
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=1, keepdims=True)


def mnb_predict(model: MnbModel, x: np.ndarray) -> np.ndarray:
    # argmax takes the lowest class index on ties.
    return np.argmax(mnb_log_posterior(model, x), axis=1)


# --- linear SGD models -------------------------------------------------------------


@dataclass
class LinearModel:
    weights: np.ndarray  # (C, F)
    bias: np.ndarray  # (C,)
    objective: str  # "hinge" | "softmax"
    l2: float = 0.0


def linear_scores(model: LinearModel, x: np.ndarray) -> np.ndarray:
    return x @ model.weights.T + model.bias


def linear_predict(model: LinearModel, x: np.ndarray) -> np.ndarray:
    return np.argmax(linear_scores(model, x), axis=1)


def linear_predict_proba(model: LinearModel, x: np.ndarray) -> np.ndarray:
    scores = linear_scores(model, x)
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=1, keepdims=True)


def linear_fit(
    x: np.ndarray,
    y: np.ndarray,
    num_classes: int,
    objective: str = "hinge",
    epochs: int = 10,
    lr: float = 1.0,
    c_penalty: float = 100.0,
    seed: int = 42,
) -> LinearModel:
    """Plain SGD, one example at a time, with a linearly decaying step size.

    hinge: Crammer-Singer multi-class hinge with L2 strength 1/(C*n);
    per violating step the weight rows of the true and the top wrong class
    move by +-lr*x (decay applied to weights first, never to the bias).
    softmax: cross-entropy gradient steps, no regularization.
    """
    if objective not in ("hinge", "softmax"):
        raise ValueError(f"unknown objective {objective!r}")
    if lr <= 0 or epochs < 1:
        raise ValueError("lr must be positive and epochs >= 1")
    y = np.asarray(y)
    if np.unique(y).size < 2:
        raise ValueError("training data must contain at least two classes")
    n, f = x.shape
    w = np.zeros((num_classes, f))
    b = np.zeros(num_classes)
    l2 = 1.0 / (c_penalty * n) if objective == "hinge" else 0.0
    total = epochs * n
    t = 0
    for epoch in range(epochs):
        order = derive(seed, "linear-shuffle", epoch).permutation(n)
        for idx in order:
            lr_t = lr * (1.0 - t / total)
            t += 1
            xi, yi = x[idx], int(y[idx])
            scores = w @ xi + b
            if objective == "hinge":
                margins = scores + 1.0
                margins[yi] = -np.inf
                rival = int(np.argmax(margins))
                if l2:
                    w *= 1.0 - lr_t * l2
                if 1.0 + scores[rival] - scores[yi] > 0:
                    w[yi] += lr_t * xi
                    w[rival] -= lr_t * xi
                    b[yi] += lr_t
                    b[rival] -= lr_t
            else:
                shifted = scores - scores.max()
                p = np.exp(shifted)
                p /= p.sum()
                p[yi] -= 1.0
                w -= lr_t * np.outer(p, xi)
                b -= lr_t * p
    return LinearModel(w, b, objective, l2)
