"""Word-level factor scores and the four ways of neutralizing a prompt.

A word's factor score is one minus its mean similarity to the frames; words
the video does not show score high. The disentanglement variants then
suppress those words: swap them for a dummy token, scale their features
down, blend towards the dummy by score, or add score-weighted noise.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .embeddings import DUMMY_TOKEN, default_codebook, embed_frames, embed_text

VARIANTS = ("swap", "deform", "deformable_swap", "blur")

DEFAULT_S = 0.76
DEFAULT_ALPHA = 0.2


@dataclass
class TextFactorScore:
    z: np.ndarray
    tokens: list = field(default_factory=list)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.ndim != 1:
            raise ValueError("factor scores must be one-dimensional")
        if self.tokens and len(self.tokens) != len(self.z):
            raise ValueError("one score per token required")
        if np.any(self.z < 0) or np.any(self.z > 1):
            raise ValueError("factor scores must lie in [0, 1]")

    def __len__(self):
        return len(self.z)

    def argmax_word(self):
        return self.tokens[int(np.argmax(self.z))] if self.tokens else None


@dataclass
class NeutralPrompt:
    variant: str
    tokens: list
    features: np.ndarray
    z: np.ndarray
    parameters: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        self.features = np.asarray(self.features, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.features.shape[0] != len(self.tokens) or len(self.z) != len(self.tokens):
            raise ValueError("tokens, scores and feature rows must have equal length")

    @property
    def w(self):
        return self.features

    @property
    def feature_hash(self):
        return hashlib.sha256(np.ascontiguousarray(self.features).astype("<f8").tobytes()).hexdigest()

    def to_dict(self, blob_ref=None):
        return {
            "variant": self.variant,
            "tokens": list(self.tokens),
            "word_scores": self.z.tolist(),
            "parameters": dict(self.parameters),
            "metadata": dict(self.metadata),
            "features": blob_ref or {"sha256": self.feature_hash, "shape": list(self.features.shape)},
        }

    def to_json(self, blob_ref=None):
        return json.dumps(self.to_dict(blob_ref), sort_keys=True)

    @classmethod
    def from_dict(cls, d, features):
        features = np.asarray(features, dtype=np.float64)
        ref = d.get("features", {})
        if "sha256" in ref:
            got = hashlib.sha256(np.ascontiguousarray(features).astype("<f8").tobytes()).hexdigest()
            if got != ref["sha256"]:
                raise ValueError("feature blob does not match the recorded hash")
        return cls(d["variant"], list(d["tokens"]), features, np.asarray(d["word_scores"]),
                   dict(d.get("parameters", {})), dict(d.get("metadata", {})))


def identify_text_factors(w, v, tokens=None):
    """Score each word by how poorly it matches the frames.

    ``z[i] = clip(1 - mean_l(w_i . v_l), 0, 1)``. Rows of ``w`` and ``v``
    are expected to be unit norm (dummy rows may be zero).
    """
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if w.shape[1] != v.shape[1]:
        raise ValueError(f"feature dims differ: words {w.shape[1]}, frames {v.shape[1]}")
    z = np.clip(1.0 - (w @ v.T).mean(axis=1), 0.0, 1.0)
    return TextFactorScore(z, list(tokens) if tokens is not None else [])


def _scores(z, M):
    z = np.asarray(getattr(z, "z", z), dtype=np.float64)
    if z.shape != (M,):
        raise ValueError(f"expected {M} scores, got shape {z.shape}")
    return z


def _swap_tokens(tokens, z, s):
    if not 0.0 < s < 1.0:
        raise ValueError("swap threshold s must lie in (0, 1)")
    return [DUMMY_TOKEN if zi > s else tok for tok, zi in zip(tokens, z)]


def factor_swap(tokens, z, s=DEFAULT_S, codebook=None):
    """Replace every token scoring above ``s`` with the dummy token."""
    tokens = list(tokens)
    z = _scores(z, len(tokens))
    swapped = _swap_tokens(tokens, z, s)
    n = sum(a != b for a, b in zip(tokens, swapped))
    feats = embed_text(swapped, codebook).w
    return NeutralPrompt("swap", swapped, feats, z, {"s": s},
                         {"n_swapped": n, "no_swap": n == 0, "source_tokens": tokens})


def factor_deform(w, z, alpha=DEFAULT_ALPHA, tokens=None):
    """Blend each row towards ``alpha * w`` by its score."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    w = np.asarray(w, dtype=np.float64)
    z = _scores(z, w.shape[0])
    if alpha == 1.0:
        # identity, kept exact rather than trusting the rounding of the blend
        wn = w.copy()
    else:
        zc = z[:, None]
        wn = zc * (alpha * w) + (1.0 - zc) * w
        wn[z == 0] = w[z == 0]
    tokens = list(tokens) if tokens is not None else [f"<{i}>" for i in range(w.shape[0])]
    return NeutralPrompt("deform", tokens, wn, z, {"alpha": alpha})


def deformable_swap(w, tokens, z, s=DEFAULT_S, codebook=None):
    """Score-weighted blend between the swapped prompt and the original."""
    w = np.asarray(w, dtype=np.float64)
    tokens = list(tokens)
    z = _scores(z, w.shape[0])
    swp = factor_swap(tokens, z, s, codebook)
    zc = z[:, None]
    wn = zc * swp.w + (1.0 - zc) * w
    wn[z == 0] = w[z == 0]
    return NeutralPrompt("deformable_swap", swp.tokens, wn, z, {"s": s}, dict(swp.metadata))


def factor_blur(w, z, seed=0, tokens=None):
    """Add standard-normal noise to each row, weighted by its score."""
    w = np.asarray(w, dtype=np.float64)
    z = _scores(z, w.shape[0])
    eps = np.random.default_rng(seed).standard_normal(w.shape)
    zc = z[:, None]
    wn = zc * (w + eps) + (1.0 - zc) * w
    wn[z == 0] = w[z == 0]
    tokens = list(tokens) if tokens is not None else [f"<{i}>" for i in range(w.shape[0])]
    return NeutralPrompt("blur", tokens, wn, z, {"seed": seed})


def neutralize(tokens, w, z, variant, s=DEFAULT_S, alpha=DEFAULT_ALPHA, seed=0, codebook=None):
    if variant == "swap":
        return factor_swap(tokens, z, s, codebook)
    if variant == "deform":
        return factor_deform(w, z, alpha, tokens)
    if variant == "deformable_swap":
        return deformable_swap(w, tokens, z, s, codebook)
    if variant == "blur":
        return factor_blur(w, z, seed, tokens)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


class PromptNeutralizer(BaseEstimator, TransformerMixin):
    """Turn a target prompt into a neutral prompt against one video.

    ``fit`` encodes the video's frames; ``transform`` takes prompts (strings
    or token lists) and returns one :class:`NeutralPrompt` per prompt.
    """

    def __init__(self, variant="swap", s=DEFAULT_S, alpha=DEFAULT_ALPHA, seed=0, strict=False):
        self.variant = variant
        self.s = s
        self.alpha = alpha
        self.seed = seed
        self.strict = strict

    def fit(self, X, y=None):
        self.frame_features_ = embed_frames(X, strict=self.strict).v
        return self

    def score_prompt(self, prompt):
        tp = embed_text(prompt)
        return tp, identify_text_factors(tp.w, self.frame_features_, tp.tokens)

    def transform(self, X):
        if isinstance(X, str):
            X = [X]
        out = []
        for prompt in X:
            tp, score = self.score_prompt(prompt)
            out.append(neutralize(tp.tokens, tp.w, score.z, self.variant, self.s,
                                  self.alpha, self.seed, default_codebook()))
        return out
