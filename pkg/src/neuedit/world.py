"""Procedural moving-shape videos with known ground truth.

Every clip shows one anti-aliased object on a flat grayscale background.
Rendering is a pure function of ``(SceneSpec, seed)`` and all pixel values
are multiples of 1/255, so clips survive an 8-bit PPM round trip bit-exactly.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_patch_dims

SHAPES = ("square", "circle", "triangle")
COLORS = ("red", "green", "blue", "white")
MOTIONS = ("slide", "bounce", "spin", "still", "shrink", "grow")
BACKGROUNDS = ("dark", "light")

MOTION_VERBS = {
    "slide": "slides",
    "bounce": "bounces",
    "spin": "spins",
    "still": "stays",
    "shrink": "shrinks",
    "grow": "grows",
}

COLOR_RGB = {
    "red": (0.90, 0.15, 0.15),
    "green": (0.15, 0.80, 0.20),
    "blue": (0.20, 0.30, 0.95),
    "white": (0.97, 0.97, 0.97),
}
BACKGROUND_LEVEL = {"dark": 0.12, "light": 0.75}

MARKER_SHADE = 0.45
SUPERSAMPLE = 2
# object radius as a fraction of the short frame side
BASE_RADIUS = 0.17
SCALE_RANGE = (0.9, 1.3)
SPIN_PER_FRAME = np.deg2rad(15.0)
SLIDE_TRAVEL = 0.35
BOUNCE_HEIGHT = 0.25


@dataclass(frozen=True)
class SceneSpec:
    shape: str = "square"
    color: str = "red"
    motion: str = "slide"
    background: str = "dark"
    frames: int = 8
    height: int = 64
    width: int = 64

    def __post_init__(self):
        for value, allowed, name in (
            (self.shape, SHAPES, "shape"),
            (self.color, COLORS, "color"),
            (self.motion, MOTIONS, "motion"),
            (self.background, BACKGROUNDS, "background"),
        ):
            if value not in allowed:
                raise ValueError(f"unknown {name} {value!r}; expected one of {allowed}")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.height < 16 or self.width < 16:
            raise ValueError("height and width must be >= 16")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class WorldConfig:
    frames: int = 8
    height: int = 64
    width: int = 64
    patch: int = 8
    motion_fraction: float = 0.5


@dataclass
class EditTask:
    video: np.ndarray
    source_spec: SceneSpec
    target_prompt: str
    edit_word_index: int
    edit_region_mask: np.ndarray
    kind: str
    seed: int
    edit_word: str = ""
    source_word: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def source_prompt(self):
        return describe(self.source_spec)


def describe(spec):
    """Canonical source caption for a scene."""
    verb = MOTION_VERBS[spec.motion]
    return f"a {spec.color} {spec.shape} {verb} on a {spec.background} background"


def _object_params(spec, rng):
    """Per-frame centre, scale and angle of the object."""
    L, H, W = spec.frames, spec.height, spec.width
    side = min(H, W)
    radius = BASE_RADIUS * side
    reach = 1.25 * radius  # farthest vertex of the largest shape at scale 1
    u = np.arange(L) / (L - 1) if L > 1 else np.zeros(1)

    scale = np.ones(L)
    if spec.motion == "shrink":
        scale = SCALE_RANGE[1] + (SCALE_RANGE[0] - SCALE_RANGE[1]) * u
    elif spec.motion == "grow":
        scale = SCALE_RANGE[0] + (SCALE_RANGE[1] - SCALE_RANGE[0]) * u
    margin = reach * scale.max() + 1.0

    travel = SLIDE_TRAVEL * W if spec.motion == "slide" else 0.0
    lift = BOUNCE_HEIGHT * H if spec.motion == "bounce" else 0.0
    x0 = rng.uniform(margin, W - margin - travel)
    y0 = rng.uniform(margin + lift, H - margin)
    theta0 = rng.uniform(0.0, 2.0 * np.pi)

    cx = x0 + travel * u
    cy = y0 - lift * np.abs(np.sin(1.5 * np.pi * u))
    theta = theta0 + (SPIN_PER_FRAME * np.arange(L) if spec.motion == "spin" else 0.0)
    return cx, cy, radius * scale, np.broadcast_to(theta, (L,)).astype(float)


def _inside(shape, dx, dy, r, theta):
    """Boolean coverage of sample points relative to the object centre."""
    c, s = np.cos(-theta), np.sin(-theta)
    x = c * dx - s * dy
    y = s * dx + c * dy
    if shape == "circle":
        return x * x + y * y <= r * r
    if shape == "square":
        h = 0.85 * r
        # rotate by 45 deg so the marker direction points at a corner
        xr = (x + y) / np.sqrt(2.0)
        yr = (y - x) / np.sqrt(2.0)
        return (np.abs(xr) <= h) & (np.abs(yr) <= h)
    # equilateral triangle with one vertex along +x
    R = 1.25 * r
    inside = np.ones_like(x, dtype=bool)
    for k in range(3):
        a = 2.0 * np.pi * k / 3.0
        # each edge's outward normal points away from a vertex direction
        nx, ny = -np.cos(a), -np.sin(a)
        inside &= nx * x + ny * y <= 0.5 * R
    return inside


def render_scene(spec, seed, patch=8):
    """Render ``spec`` into an (L, H, W, 3) float video quantized to 1/255."""
    check_patch_dims(spec.height, spec.width, patch)
    video, _ = _render(spec, seed)
    return video


def render_with_mask(spec, seed, patch=8):
    """Render and also return the per-frame object coverage (L, H, W)."""
    check_patch_dims(spec.height, spec.width, patch)
    return _render(spec, seed)


def _render(spec, seed):
    rng = np.random.default_rng(seed)
    L, H, W = spec.frames, spec.height, spec.width
    cx, cy, r, theta = _object_params(spec, rng)

    k = SUPERSAMPLE
    ys = (np.arange(H * k) + 0.5) / k
    xs = (np.arange(W * k) + 0.5) / k
    gx, gy = np.meshgrid(xs, ys)

    bg = BACKGROUND_LEVEL[spec.background]
    body = np.asarray(COLOR_RGB[spec.color])
    mark = MARKER_SHADE * body

    video = np.empty((L, H, W, 3))
    coverage = np.empty((L, H, W))
    for i in range(L):
        dx, dy = gx - cx[i], gy - cy[i]
        obj = _inside(spec.shape, dx, dy, r[i], theta[i])
        mx = cx[i] + 0.5 * r[i] * np.cos(theta[i])
        my = cy[i] + 0.5 * r[i] * np.sin(theta[i])
        dot = obj & ((gx - mx) ** 2 + (gy - my) ** 2 <= (0.28 * r[i]) ** 2)
        frame = np.full((H * k, W * k, 3), bg)
        frame[obj] = body
        frame[dot] = mark
        frame = frame.reshape(H, k, W, k, 3).mean(axis=(1, 3))
        video[i] = np.round(frame * 255.0) / 255.0
        coverage[i] = obj.reshape(H, k, W, k).mean(axis=(1, 3))
    return video, coverage


def object_mask(spec, seed, patch=8):
    """Union over frames of pixels touched by the object, shape (L, H, W).

    Every frame of the returned mask holds the same union.
    """
    _, cov = render_with_mask(spec, seed, patch)
    union = (cov > 0).any(axis=0)
    return np.broadcast_to(union, cov.shape).copy()


def sample_edit_task(seed, config=None):
    """Draw a (video, source spec, target prompt) tuple differing in one word.

    Even seeds give motion edits (non-rigid), odd seeds colour edits (rigid).
    The source attributes walk the 144 attribute combinations with a
    coprime stride so consecutive seeds cover the space evenly.
    """
    cfg = config or WorldConfig()
    idx = (int(seed) * 89) % (len(SHAPES) * len(COLORS) * len(MOTIONS) * len(BACKGROUNDS))
    shape = SHAPES[idx % 3]
    color = COLORS[(idx // 3) % 4]
    motion = MOTIONS[(idx // 12) % 6]
    background = BACKGROUNDS[idx // 72]
    spec = SceneSpec(shape, color, motion, background, cfg.frames, cfg.height, cfg.width)

    motion_task = _is_motion_task(seed, cfg.motion_fraction)
    offset = 1 + (int(seed) // 2) % ((len(MOTIONS) if motion_task else len(COLORS)) - 1)
    if motion_task:
        new = MOTIONS[(MOTIONS.index(motion) + offset) % len(MOTIONS)]
        target_spec = SceneSpec(shape, color, new, background, cfg.frames, cfg.height, cfg.width)
        kind, source_word, edit_word = "motion", MOTION_VERBS[motion], MOTION_VERBS[new]
    else:
        new = COLORS[(COLORS.index(color) + offset) % len(COLORS)]
        target_spec = SceneSpec(shape, new, motion, background, cfg.frames, cfg.height, cfg.width)
        kind, source_word, edit_word = "color", color, new

    target = describe(target_spec)
    edit_index = target.split().index(edit_word)
    video, cov = render_with_mask(spec, seed, cfg.patch)
    union = (cov > 0).any(axis=0)
    mask = np.broadcast_to(union, cov.shape).copy()
    return EditTask(
        video=video,
        source_spec=spec,
        target_prompt=target,
        edit_word_index=edit_index,
        edit_region_mask=mask,
        kind=kind,
        seed=int(seed),
        edit_word=edit_word,
        source_word=source_word,
        metadata={"rigid": kind == "color", "mapping": "non-rigid=motion, rigid=color"},
    )


def _is_motion_task(seed, fraction):
    if fraction == 0.5:
        return int(seed) % 2 == 0
    # general fractions fall back to a seeded coin
    return bool(np.random.default_rng([int(seed), 1]).random() < fraction)


def all_specs(frames=8, height=64, width=64):
    """Every attribute combination, in canonical order."""
    return [
        SceneSpec(s, c, m, b, frames, height, width)
        for s in SHAPES
        for c in COLORS
        for m in MOTIONS
        for b in BACKGROUNDS
    ]
