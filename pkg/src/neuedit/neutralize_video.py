"""Pixel-level factor scores from cross-attention, and the blurred neutral video.

Pipeline order is fixed: patch score -> per-video max normalization ->
bicubic upsampling -> threshold -> blend with a Gaussian-blurred copy.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ._validation import check_same_shape, check_video
from .diffusion.sampling import forward_diffuse

DEFAULT_SIGMA = 4.0
DEFAULT_TAU = 0.2
PROBE_FRACTIONS = (0.2, 0.5, 0.8)


def _hash(a):
    return hashlib.sha256(np.ascontiguousarray(a, dtype="<f8").tobytes()).hexdigest()


@dataclass
class VisualFactorScore:
    z: np.ndarray  # (L, H, W)
    grid: tuple
    tau: float

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if np.any(self.z < 0) or np.any(self.z > 1):
            raise ValueError("visual scores must lie in [0, 1]")

    @property
    def hash(self):
        return _hash(self.z)


@dataclass
class NeutralVideo:
    frames: np.ndarray
    sigma: float
    provenance: dict = field(default_factory=dict)


def visual_factor_score(attn, z, normalize=True):
    """Per-patch score ``m . z`` for every frame, max-normalized per video.

    ``attn`` is (L, P, M) or (L, Hp, Wp, M); the result keeps the leading
    spatial layout. Scores are divided by their maximum over the whole
    video (an all-zero field stays zero).
    """
    attn = np.asarray(attn, dtype=np.float64)
    z = np.asarray(getattr(z, "z", z), dtype=np.float64)
    if attn.shape[-1] != z.shape[0]:
        raise ValueError(f"attention has {attn.shape[-1]} words, scores have {z.shape[0]}")
    raw = attn @ z
    if not normalize:
        return raw
    peak = raw.max()
    return raw / peak if peak > 0 else np.zeros_like(raw)


def _catmull_rom(x):
    x = np.abs(x)
    return np.where(
        x <= 1, 1.5 * x ** 3 - 2.5 * x ** 2 + 1,
        np.where(x < 2, -0.5 * x ** 3 + 2.5 * x ** 2 - 4 * x + 2, 0.0),
    )


def _resample_matrix(n_in, n_out):
    """(n_out, n_in) Catmull-Rom weights with pixel-centre alignment and clamped edges."""
    R = np.zeros((n_out, n_in))
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    base = np.floor(pos).astype(int)
    for k in range(-1, 3):
        idx = base + k
        wk = _catmull_rom(pos - idx)
        np.add.at(R, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), wk)
    return R


def upsample_scores(scores, height, width):
    """Bicubic (Catmull-Rom) upsampling of (L, Hp, Wp) scores, clamped to [0, 1]."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 2:
        s = s[None]
    L, hp, wp = s.shape
    if height < hp or width < wp:
        raise ValueError("target size must not be smaller than the score grid")
    Ry = _resample_matrix(hp, height)
    Rx = _resample_matrix(wp, width)
    out = np.einsum("yi,lij,xj->lyx", Ry, s, Rx)
    return np.clip(out, 0.0, 1.0)


def threshold_scores(scores, tau=DEFAULT_TAU):
    """Zero every entry strictly below ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    s = np.array(scores, dtype=np.float64)
    s[s < tau] = 0.0
    return s


def gaussian_kernel(sigma):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    r = int(np.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-x * x / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(video, sigma):
    """Separable Gaussian blur of every frame, reflected at the borders."""
    k = gaussian_kernel(sigma)
    v = np.asarray(video, dtype=np.float64)
    out = ndimage.correlate1d(v, k, axis=-3 if v.ndim >= 3 else 0, mode="reflect")
    out = ndimage.correlate1d(out, k, axis=-2 if v.ndim >= 3 else 1, mode="reflect")
    return out


def make_neutral_video(video, scores, sigma=DEFAULT_SIGMA):
    """Blend the video with its blurred copy, pixel weight ``scores``."""
    v = check_video(video)
    z = np.asarray(getattr(scores, "z", scores), dtype=np.float64)
    check_same_shape(v[..., 0], z, "video and visual scores")
    zc = z[..., None]
    out = zc * gaussian_blur(v, sigma) + (1.0 - zc) * v
    keep = z == 0
    out[keep] = v[keep]
    return NeutralVideo(out, float(sigma), {"video_sha256": _hash(v), "scores_sha256": _hash(z)})


def probe_timesteps(T, fractions=PROBE_FRACTIONS):
    return [max(1, min(T, int(round(f * T)))) for f in fractions]


def extract_attention(model, video, w, sched, codec, t_probe=None, seed=0):
    """Cross-attention maps (L, P, M) averaged over the probe timesteps.

    The clip is encoded, noised to each probe step with seeded noise and
    passed through the denoiser once per step.
    """
    lat = codec.encode(video)
    ts = probe_timesteps(sched.T) if t_probe is None else list(np.atleast_1d(t_probe))
    rng = np.random.default_rng(seed)
    acc = 0.0
    for t in ts:
        eps = rng.standard_normal(lat.z.shape)
        zt = forward_diffuse(lat.z, int(t), eps, sched)
        acc = acc + model.predict(zt, int(t), w, lat.grid).attention
    return acc / len(ts), lat.grid


def visual_scores(attn, grid, word_scores, height, width, tau=DEFAULT_TAU):
    """Full score chain: normalize, upsample, threshold."""
    L = attn.shape[0]
    patch = visual_factor_score(attn, word_scores).reshape(L, grid[0], grid[1])
    return VisualFactorScore(threshold_scores(upsample_scores(patch, height, width), tau), tuple(grid), tau)
