"""Input validation helpers shared by the estimators."""

import numpy as np


class DetectionError(ValueError):
    """Raised when the frame detector cannot find an object."""


class DivergenceError(RuntimeError):
    """Raised when a training loss becomes non-finite."""


def check_video(video, name="video"):
    """Return ``video`` as a float64 array of shape (L, H, W, 3) in [0, 1]."""
    v = np.asarray(video, dtype=np.float64)
    if v.ndim == 3:
        v = v[None]
    if v.ndim != 4 or v.shape[-1] != 3:
        raise ValueError(f"{name} must have shape (L, H, W, 3), got {v.shape}")
    if v.shape[0] < 1:
        raise ValueError(f"{name} needs at least one frame")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def check_patch_dims(height, width, patch):
    if height % patch or width % patch:
        raise ValueError(
            f"frame size {height}x{width} is not divisible by patch size {patch}"
        )


def check_unit_rows(x, name="features", atol=1e-6, allow_zero=False):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {x.shape}")
    norms = np.linalg.norm(x, axis=1)
    ok = np.abs(norms - 1.0) <= atol
    if allow_zero:
        ok |= norms == 0.0
    if not np.all(ok):
        raise ValueError(f"{name} rows must have unit L2 norm")
    return x


def check_scores(z, name="scores"):
    z = np.asarray(z, dtype=np.float64)
    if np.any(z < 0) or np.any(z > 1) or not np.all(np.isfinite(z)):
        raise ValueError(f"{name} must lie in [0, 1]")
    return z


def check_same_shape(a, b, what="inputs"):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what} shape mismatch: {np.shape(a)} vs {np.shape(b)}")
