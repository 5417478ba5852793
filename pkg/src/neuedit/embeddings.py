"""Concept-aligned text and frame encoders.

The text side looks words up in a seeded orthonormal codebook. The frame
side never sees renderer metadata: it measures each frame with a small
pixel-space detector (background subtraction, colour and fill statistics,
centroid tracks) and sums the codebook vectors of what it detects, weighted
by soft evidence.
"""

import hashlib
import json
import re

import numpy as np
from scipy import ndimage

from ._validation import DetectionError, check_video
from .world import BACKGROUND_LEVEL, COLOR_RGB, MOTION_VERBS

SHAPE_WORDS = ("square", "circle", "triangle")
COLOR_WORDS = ("red", "green", "blue", "white")
MOTION_WORDS = tuple(MOTION_VERBS.values())
TONE_WORDS = ("dark", "light")
CONTENT_WORDS = SHAPE_WORDS + COLOR_WORDS + MOTION_WORDS + TONE_WORDS + ("background",)
ATTRIBUTE_WORDS = SHAPE_WORDS + COLOR_WORDS + MOTION_WORDS + TONE_WORDS
FUNCTION_WORDS = ("a", "an", "on", "the", "in", "is", "with", "and", "of")
VOCABULARY = CONTENT_WORDS + FUNCTION_WORDS

DUMMY_TOKEN = "<DMY>"
FILLER = "<filler>"

_PUNCT = re.compile(r"[^\w\s<>]")


def tokenize(text):
    """Lowercase, strip punctuation and split on whitespace."""
    if text is None or not str(text).strip():
        raise ValueError("cannot tokenize empty text")
    tokens = _PUNCT.sub("", str(text).lower()).split()
    if not tokens:
        raise ValueError("text contains no tokens")
    return tokens


class Codebook:
    """Fixed word -> unit vector table.

    Content words and the shared filler direction are exactly orthonormal
    columns of a seeded QR factor, so distinct concepts have cosine 0.
    """

    def __init__(self, vectors, dim):
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        self.dim = int(dim)

    @classmethod
    def generate(cls, dim=32, seed=0):
        keys = list(CONTENT_WORDS) + [FILLER]
        if dim < len(keys):
            raise ValueError(f"dim must be >= {len(keys)} for an orthonormal codebook")
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((dim, len(keys))))
        return cls({k: q[:, i].copy() for i, k in enumerate(keys)}, dim)

    def __getitem__(self, word):
        if word == DUMMY_TOKEN:
            return np.zeros(self.dim)
        return self.vectors.get(word, self.vectors[FILLER])

    def to_json(self):
        return json.dumps(
            {"dim": self.dim, "vectors": {k: v.tolist() for k, v in sorted(self.vectors.items())}},
            sort_keys=True,
        )

    @property
    def hash(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_json(cls, text, expected_hash=None):
        data = json.loads(text)
        book = cls(data["vectors"], data["dim"])
        if expected_hash is not None and book.hash != expected_hash:
            raise ValueError("codebook hash does not match the manifest")
        return book


_DEFAULT_BOOK = {}


def default_codebook(dim=32, seed=0):
    key = (dim, seed)
    if key not in _DEFAULT_BOOK:
        _DEFAULT_BOOK[key] = Codebook.generate(dim, seed)
    return _DEFAULT_BOOK[key]


class TokenizedPrompt:
    """Word tokens and their (M, d) feature rows."""

    def __init__(self, tokens, features):
        self.tokens = list(tokens)
        self.features = np.asarray(features, dtype=np.float64)

    @property
    def w(self):
        return self.features

    def __len__(self):
        return len(self.tokens)

    def __repr__(self):
        return f"TokenizedPrompt({' '.join(self.tokens)!r})"


def embed_text(tokens, codebook=None):
    """Map tokens to codebook rows; ``<DMY>`` maps to an exact zero row."""
    book = codebook or default_codebook()
    if isinstance(tokens, str):
        tokens = tokenize(tokens)
    tokens = list(tokens)
    if not tokens:
        raise ValueError("need at least one token")
    if len(tokens) > 32:
        raise ValueError("prompts are limited to 32 tokens")
    rows = []
    for tok in tokens:
        v = book[tok]
        n = np.linalg.norm(v)
        rows.append(v / n if n > 0 else v)
    return TokenizedPrompt(tokens, np.vstack(rows))


def is_content_word(token):
    return token in CONTENT_WORDS


# ---------------------------------------------------------------------------
# frame detector

# fill ratio A / (pi r_max^2) of each shape, measured on renders
SHAPE_FILL = {"circle": 0.91, "square": 0.64, "triangle": 0.43}
# prototypes of (travel, lift, log-area change, spin), each roughly unit scale
MOTION_PROTOTYPES = {
    "slides": (1.0, 0.0, 0.0, 0.0),
    "bounces": (0.0, 1.0, 0.0, 0.0),
    "spins": (0.0, 0.0, 0.0, 1.0),
    "stays": (0.0, 0.0, 0.0, 0.0),
    "shrinks": (0.0, 0.0, -1.0, 0.0),
    "grows": (0.0, 0.0, 1.0, 0.0),
}
MOTION_SCALE = np.array([0.35, 0.25, 0.75, 0.26])


def _softmax(logits):
    e = np.exp(logits - logits.max())
    return e / e.sum()


class FrameFeatures:
    """Per-frame unit feature rows plus the raw detections behind them."""

    def __init__(self, v, detections):
        self.v = v
        self.detections = detections

    def __len__(self):
        return self.v.shape[0]


class FrameEncoder:
    """Pixel-space stand-in for an image encoder.

    Parameters
    ----------
    filler_weight : float
        Weight of the shared filler direction in every frame feature.
        Function words align with it, so they score as present.
    texture_weight : float
        Gain on a pseudo-random projection of high-frequency energy; clean
        renders have almost none, noise frames are dominated by it.
    """

    def __init__(self, codebook=None, filler_weight=1.5, texture_weight=20.0,
                 color_temp=0.02, shape_temp=0.01, motion_temp=0.15, seed=0):
        self.codebook = codebook or default_codebook()
        self.filler_weight = filler_weight
        self.texture_weight = texture_weight
        self.color_temp = color_temp
        self.shape_temp = shape_temp
        self.motion_temp = motion_temp
        rng = np.random.default_rng(seed + 1000)
        self._proj = rng.standard_normal((self.codebook.dim, 64 * 3))

    # -- measurements -----------------------------------------------------
    def detect_frame(self, frame):
        H, W, _ = frame.shape
        border = np.concatenate(
            [frame[0], frame[-1], frame[:, 0], frame[:, -1]], axis=0
        )
        bg = np.median(border, axis=0)
        diff = np.abs(frame - bg).max(axis=-1)
        peak = diff.max()
        if peak < 0.1 or (diff > 0.1).sum() < 4:
            raise DetectionError("no object found in frame")
        body = np.median(diff[diff > 0.1])
        core = ndimage.binary_fill_holes(diff > 0.5 * body)
        labels, n = ndimage.label(core)
        if n > 1:
            sizes = ndimage.sum(core, labels, index=np.arange(1, n + 1))
            core = labels == (1 + int(np.argmax(sizes)))
        ys, xs = np.nonzero(core)
        area = float(len(xs))
        cx, cy = xs.mean() + 0.5, ys.mean() + 0.5
        rmax = np.sqrt(((xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2).max()) + 0.5
        fill = area / (np.pi * rmax ** 2)
        inner = ndimage.binary_erosion(core)
        if inner.sum() < 4:
            inner = core
        color = np.median(frame[inner], axis=0)
        # the darker marker breaks the shape's symmetry and gives an orientation
        iy, ix = np.nonzero(inner)
        wts = ((frame[inner] - color) ** 2).sum(axis=1)
        if wts.sum() > 1e-9:
            heading = np.array([(ix + 0.5 - cx) @ wts, (iy + 0.5 - cy) @ wts]) / wts.sum()
        else:
            heading = np.zeros(2)
        return {
            "background": bg,
            "color": color,
            "area": area,
            "centroid": (cx, cy),
            "fill": fill,
            "rmax": rmax,
            "heading": heading,
        }

    def _texture(self, frame):
        smooth = ndimage.gaussian_filter(frame, sigma=(1.0, 1.0, 0.0), mode="reflect")
        energy = np.abs(frame - smooth).mean()
        H, W, _ = frame.shape
        small = frame.reshape(8, H // 8, 8, W // 8, 3).mean(axis=(1, 3))
        small = (small - small.mean()).reshape(-1)
        u = self._proj @ small
        n = np.linalg.norm(u)
        return energy, (u / n if n > 0 else u)

    @staticmethod
    def motion_features(dets, width, height):
        cx = np.array([d["centroid"][0] for d in dets])
        cy = np.array([d["centroid"][1] for d in dets])
        area = np.array([d["area"] for d in dets])
        travel = abs(cx[-1] - cx[0]) / width
        lift = (cy.max() - cy.min()) / height
        growth = np.log(area[-1] / area[0])
        turns = []
        for a, b in zip(dets[:-1], dets[1:]):
            ha, hb = a["heading"], b["heading"]
            if np.linalg.norm(ha) < 0.3 or np.linalg.norm(hb) < 0.3:
                turns.append(0.0)
                continue
            cross = ha[0] * hb[1] - ha[1] * hb[0]
            turns.append(abs(np.arctan2(cross, ha @ hb)))
        return np.array([travel, lift, growth, float(np.mean(turns))])

    def motion_evidence(self, feats):
        names = list(MOTION_PROTOTYPES)
        protos = np.array([MOTION_PROTOTYPES[k] for k in names])
        x = feats / MOTION_SCALE
        d2 = ((protos - x) ** 2).sum(axis=1)
        return dict(zip(names, _softmax(-d2 / self.motion_temp)))

    def evidence(self, det):
        colors = np.array([COLOR_RGB[c] for c in COLOR_WORDS])
        d2 = ((colors - det["color"]) ** 2).sum(axis=1)
        color_e = dict(zip(COLOR_WORDS, _softmax(-d2 / self.color_temp)))
        fill = np.array([SHAPE_FILL[s] for s in SHAPE_WORDS])
        shape_e = dict(zip(SHAPE_WORDS, _softmax(-((fill - det["fill"]) ** 2) / self.shape_temp)))
        return color_e, shape_e

    def tone_evidence(self, bg):
        g = float(np.mean(bg))
        levels = np.array([BACKGROUND_LEVEL[t] for t in TONE_WORDS])
        return dict(zip(TONE_WORDS, _softmax(-((levels - g) ** 2) / 0.01)))

    # -- encoding ---------------------------------------------------------
    def encode(self, video, strict=True):
        video = check_video(video)
        L, H, W, _ = video.shape
        book = self.codebook
        dets = []
        for frame in video:
            try:
                dets.append(self.detect_frame(frame))
            except DetectionError:
                if strict:
                    raise
                dets.append(None)

        motion_e = {}
        found = [d for d in dets if d is not None]
        if L >= 2 and len(found) == L:
            motion_e = self.motion_evidence(self.motion_features(found, W, H))

        rows = []
        for frame, det in zip(video, dets):
            bg = det["background"] if det is not None else np.median(frame.reshape(-1, 3), axis=0)
            vec = book["background"] + self.filler_weight * book[FILLER]
            for word, e in self.tone_evidence(bg).items():
                vec = vec + e * book[word]
            if det is not None:
                color_e, shape_e = self.evidence(det)
                for table in (color_e, shape_e, motion_e):
                    for word, e in table.items():
                        vec = vec + e * book[word]
            energy, u = self._texture(frame)
            vec = vec + self.texture_weight * energy * u
            rows.append(vec / np.linalg.norm(vec))
        return FrameFeatures(np.vstack(rows), dets)


_DEFAULT_ENCODER = {}


def default_frame_encoder():
    if "enc" not in _DEFAULT_ENCODER:
        _DEFAULT_ENCODER["enc"] = FrameEncoder()
    return _DEFAULT_ENCODER["enc"]


def embed_frames(video, encoder=None, strict=True):
    """Unit feature row per frame, shape (L, d)."""
    return (encoder or default_frame_encoder()).encode(video, strict=strict)
