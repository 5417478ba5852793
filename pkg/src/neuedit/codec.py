"""Exactly invertible patch codec between pixel videos and latent videos."""

import hashlib
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_patch_dims, check_video


@dataclass
class LatentVideo:
    """Latent tensor ``z`` of shape (L, P, D) on an (Hp, Wp) patch grid."""

    z: np.ndarray
    grid: tuple

    @property
    def frames(self):
        return self.z.shape[0]

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.ndim != 3 or self.z.shape[1] != self.grid[0] * self.grid[1]:
            raise ValueError(f"latent shape {self.z.shape} does not match grid {self.grid}")
        if not np.all(np.isfinite(self.z)):
            raise ValueError("latent contains non-finite values")

    def with_z(self, z):
        return LatentVideo(z, self.grid)


class PatchCodec(BaseEstimator, TransformerMixin):
    """Non-overlapping p x p patches, mapped to [-1, 1], rotated by an orthogonal Q.

    ``fit`` only checks frame dimensions; the map is fixed by ``patch`` and
    ``seed``.
    """

    def __init__(self, patch=8, channels=3, seed=0):
        self.patch = patch
        self.channels = channels
        self.seed = seed

    @property
    def latent_dim(self):
        return self.patch * self.patch * self.channels

    @property
    def Q(self):
        if not hasattr(self, "_Q"):
            rng = np.random.default_rng(self.seed)
            q, r = np.linalg.qr(rng.standard_normal((self.latent_dim, self.latent_dim)))
            self._Q = q * np.sign(np.diag(r))
        return self._Q

    @property
    def hash(self):
        return hashlib.sha256(np.ascontiguousarray(self.Q).astype("<f8").tobytes()).hexdigest()

    def fit(self, X=None, y=None):
        if X is not None:
            v = check_video(X)
            check_patch_dims(v.shape[1], v.shape[2], self.patch)
        self.Q_ = self.Q
        return self

    def transform(self, X):
        return self.encode(X)

    def inverse_transform(self, X):
        return self.decode(X)

    def encode(self, video):
        v = check_video(video)
        L, H, W, C = v.shape
        p = self.patch
        check_patch_dims(H, W, p)
        if C != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {C}")
        Hp, Wp = H // p, W // p
        patches = v.reshape(L, Hp, p, Wp, p, C).transpose(0, 1, 3, 2, 4, 5)
        flat = patches.reshape(L, Hp * Wp, p * p * C)
        return LatentVideo((2.0 * flat - 1.0) @ self.Q, (Hp, Wp))

    def decode(self, latent, clamp=True, return_raw=False):
        """Invert :meth:`encode`; clamping to [0, 1] only touches the emitted copy."""
        if not isinstance(latent, LatentVideo):
            raise TypeError("decode expects a LatentVideo")
        z = latent.z
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"latent dim {z.shape[-1]} != codec dim {self.latent_dim}")
        L = z.shape[0]
        Hp, Wp = latent.grid
        p, C = self.patch, self.channels
        flat = 0.5 * (z @ self.Q.T + 1.0)
        raw = flat.reshape(L, Hp, Wp, p, p, C).transpose(0, 1, 3, 2, 4, 5)
        raw = raw.reshape(L, Hp * p, Wp * p, C)
        out = np.clip(raw, 0.0, 1.0) if clamp else raw
        if return_raw:
            return out, raw
        return out
