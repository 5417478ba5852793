"""Tiny text-conditioned noise predictor with hand-written backprop.

A closed-form Gaussian patch prior (mean ``mu``, rank-k covariance
``U diag(lam) U^T``) supplies the linear MMSE estimates ``eps_lin`` and
``x_lin`` of the noise and the clean patch. The network refines them per
token (frame l, patch p)::

    h0  = x_lin W_in + mean(x_lin) W_g + ctx(t, l, p) W_ctx + b_in
    h1  = h0 + lam * (A h0 - h0)            # mix with same patch in adjacent frames
    a   = softmax((h1 Wq)(w Wk)^T / sqrt(H)) # cross-attention over the M words
    h2  = h1 + a (w Wv) Wo
    h3  = h2 + tanh(h2 W1 + b1) W2 + b2
    eps = eps_lin + c_t (h3 W_out + b_out)

``mean(x_lin)`` pools the whole clip, so clip-wide facts such as the
background level need not be read from the prompt. ``c_t`` is the prior's
per-element noise MMSE at step t, so the learned residual has roughly unit
scale at every noise level. ``ctx`` holds fixed sinusoidal features of the timestep and of the patch row, column and frame
position. Without a fitted prior (mu = 0, identity covariance) the skip
reduces to ``sqrt(1 - abar_t) z``.
"""

from dataclasses import dataclass

import numpy as np

PARAM_ORDER = (
    "W_in", "W_g", "W_ctx", "b_in", "lam", "Wq", "Wk", "Wv", "Wo",
    "W1", "b1", "W2", "b2", "W_out", "b_out",
)


@dataclass
class DenoiserOutput:
    eps_hat: np.ndarray
    attention: np.ndarray  # (L, P, M), rows sum to one


def time_features(t, n_freq):
    if n_freq == 0:
        return np.zeros(0)
    freqs = np.exp(-np.log(1000.0) * np.arange(n_freq) / max(n_freq, 1))
    return np.concatenate([np.sin(t * freqs), np.cos(t * freqs)])


def position_features(L, grid, n_freq):
    """(L, P, 6 * n_freq) sinusoidal features of row, column and frame."""
    Hp, Wp = grid
    P = Hp * Wp
    if n_freq == 0:
        return np.zeros((L, P, 0))
    rows = (np.repeat(np.arange(Hp), Wp) + 0.5) / Hp
    cols = (np.tile(np.arange(Wp), Hp) + 0.5) / Wp
    frames = np.arange(L) / max(L - 1, 1)
    k = np.pi * np.arange(1, n_freq + 1)
    parts = []
    for coord in (rows, cols):
        parts += [np.sin(np.outer(coord, k)), np.cos(np.outer(coord, k))]
    spatial = np.concatenate(parts, axis=1)  # (P, 4 n)
    temporal = np.concatenate([np.sin(np.outer(frames, k)), np.cos(np.outer(frames, k))], axis=1)
    return np.concatenate(
        [np.broadcast_to(spatial, (L, P, spatial.shape[1])),
         np.broadcast_to(temporal[:, None, :], (L, P, temporal.shape[1]))],
        axis=2,
    )


def neighbour_matrix(L):
    """Row-stochastic average over adjacent frames (identity for one frame)."""
    A = np.zeros((L, L))
    if L == 1:
        A[0, 0] = 1.0
        return A
    for i in range(L):
        nb = [j for j in (i - 1, i + 1) if 0 <= j < L]
        A[i, nb] = 1.0 / len(nb)
    return A


class DenoiserModel:
    """Parameter container plus forward/backward passes."""

    def __init__(self, latent_dim=192, width=32, text_dim=32, mlp_width=64,
                 time_freqs=8, pos_freqs=2, temporal=True, alpha_bar=None, seed=0):
        self.latent_dim = latent_dim
        self.width = width
        self.text_dim = text_dim
        self.mlp_width = mlp_width
        self.time_freqs = time_freqs
        self.pos_freqs = pos_freqs
        self.temporal = temporal
        self.alpha_bar = None if alpha_bar is None else np.asarray(alpha_bar, dtype=np.float64)
        self.seed = seed
        self.prior_mean = np.zeros(latent_dim)
        self.prior_basis = np.zeros((latent_dim, 0))
        self.prior_var = np.zeros(0)
        self.prior_floor = 0.0
        self.params = self._init_params(np.random.default_rng(seed))

    def fit_prior(self, latents, rank=48):
        """Set the Gaussian patch prior from the statistics of ``latents``.

        The covariance keeps its top ``rank`` eigenpairs; the rest of the
        spectrum is replaced by its mean (an isotropic floor).
        """
        X = np.concatenate([np.asarray(getattr(z, "z", z)).reshape(-1, self.latent_dim) for z in latents])
        mu = X.mean(axis=0)
        lam, U = np.linalg.eigh(np.cov((X - mu).T))
        top = np.argsort(lam)[::-1][:rank]
        self.prior_mean = mu
        self.prior_basis = U[:, top]
        self.prior_var = np.maximum(lam[top], 0.0)
        rest = np.delete(lam, top)
        self.prior_floor = float(max(rest.mean(), 0.0)) if rest.size else 0.0
        return self

    def _prior(self, z, t):
        """Linear-Gaussian noise and clean estimates plus the residual scale."""
        if self.alpha_bar is None:
            return np.zeros_like(z), z, 1.0
        a = 1.0 if t == 0 else self.alpha_bar[t - 1]
        if a >= 1.0:
            return np.zeros_like(z), z, 0.0
        if self.prior_var.size == 0:
            # identity covariance, zero mean
            return np.sqrt(1.0 - a) * z, np.sqrt(a) * z, np.sqrt(a)
        y = z - np.sqrt(a) * self.prior_mean
        yk = y @ self.prior_basis
        denom = a * self.prior_var + 1.0 - a
        y_perp = y - yk @ self.prior_basis.T
        d_perp = a * self.prior_floor + 1.0 - a
        eps_lin = np.sqrt(1.0 - a) * ((yk / denom) @ self.prior_basis.T + y_perp / d_perp)
        x_lin = self.prior_mean + np.sqrt(a) * (
            (yk * self.prior_var / denom) @ self.prior_basis.T + y_perp * (self.prior_floor / d_perp))
        n_perp = self.latent_dim - self.prior_var.size
        mmse = (np.sum(a * self.prior_var / denom) + n_perp * a * self.prior_floor / d_perp) / self.latent_dim
        return eps_lin, x_lin, np.sqrt(max(mmse, 1e-6))

    @property
    def ctx_dim(self):
        return 2 * self.time_freqs + 6 * self.pos_freqs

    def config(self):
        return {
            "latent_dim": self.latent_dim, "width": self.width, "text_dim": self.text_dim,
            "mlp_width": self.mlp_width, "time_freqs": self.time_freqs,
            "pos_freqs": self.pos_freqs, "temporal": self.temporal, "seed": self.seed,
        }

    def _init_params(self, rng):
        D, H, dt, F, C = self.latent_dim, self.width, self.text_dim, self.mlp_width, self.ctx_dim
        g = rng.standard_normal
        return {
            "W_in": g((D, H)) / np.sqrt(D),
            "W_g": g((D, H)) / np.sqrt(D),
            "W_ctx": g((C, H)) / np.sqrt(max(C, 1)),
            "b_in": np.zeros(H),
            "lam": np.array([0.25 if self.temporal else 0.0]),
            "Wq": g((H, H)) / np.sqrt(H),
            "Wk": g((dt, H)),
            "Wv": g((dt, H)),
            "Wo": g((H, H)) / np.sqrt(H),
            "W1": g((H, F)) / np.sqrt(H),
            "b1": np.zeros(F),
            "W2": g((F, H)) / np.sqrt(F),
            "b2": np.zeros(H),
            "W_out": g((H, D)) * 0.1 / np.sqrt(H),
            "b_out": np.zeros(D),
        }

    def n_params(self):
        return int(sum(p.size for p in self.params.values()))

    def copy(self):
        other = DenoiserModel.__new__(DenoiserModel)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.prior_mean = self.prior_mean.copy()
        other.prior_basis = self.prior_basis.copy()
        other.prior_var = self.prior_var.copy()
        return other

    def flat_params(self):
        return np.concatenate([self.params[k].ravel() for k in PARAM_ORDER])

    def set_flat_params(self, flat):
        i = 0
        for k in PARAM_ORDER:
            n = self.params[k].size
            self.params[k] = np.asarray(flat[i:i + n], dtype=np.float64).reshape(self.params[k].shape).copy()
            i += n

    # -- passes -----------------------------------------------------------
    def forward(self, z, t, cond, grid=None):
        p = self.params
        z = np.asarray(z, dtype=np.float64)
        L, P, D = z.shape
        if D != self.latent_dim:
            raise ValueError(f"latent dim {D} != model dim {self.latent_dim}")
        w = np.asarray(cond, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != self.text_dim:
            raise ValueError(f"conditioning must be (M, {self.text_dim}), got {w.shape}")
        if grid is None:
            side = int(round(np.sqrt(P)))
            grid = (side, P // side)
        H = self.width

        ctx = np.concatenate(
            [np.broadcast_to(time_features(t, self.time_freqs), (L, P, 2 * self.time_freqs)),
             position_features(L, grid, self.pos_freqs)],
            axis=2,
        )
        eps_lin, x_lin, scale = self._prior(z, t)
        pooled = x_lin.mean(axis=(0, 1))
        h0 = x_lin @ p["W_in"] + pooled @ p["W_g"] + ctx @ p["W_ctx"] + p["b_in"]
        A = neighbour_matrix(L)
        mix = np.einsum("lk,kph->lph", A, h0) - h0
        h1 = h0 + p["lam"][0] * mix

        q = h1 @ p["Wq"]
        k = w @ p["Wk"]
        v = w @ p["Wv"]
        s = q @ k.T / np.sqrt(H)
        s = s - s.max(axis=-1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=-1, keepdims=True)
        o = a @ v
        h2 = h1 + o @ p["Wo"]

        g = np.tanh(h2 @ p["W1"] + p["b1"])
        h3 = h2 + g @ p["W2"] + p["b2"]
        eps = eps_lin + scale * (h3 @ p["W_out"] + p["b_out"])
        cache = dict(x_lin=x_lin, pooled=pooled, scale=scale, t=t, w=w, ctx=ctx, A=A, h0=h0, mix=mix, h1=h1,
                     q=q, k=k, v=v, a=a, o=o, h2=h2, g=g, h3=h3)
        return DenoiserOutput(eps, a), cache

    def backward(self, cache, d_eps):
        """Gradients of a scalar loss w.r.t. every parameter, given dL/d eps."""
        p = self.params
        H = self.width
        c = cache
        grads = {}
        de = np.asarray(d_eps) * c["scale"]

        grads["W_out"] = np.einsum("lph,lpd->hd", c["h3"], de)
        grads["b_out"] = de.sum(axis=(0, 1))
        dh3 = de @ p["W_out"].T

        grads["b2"] = dh3.sum(axis=(0, 1))
        grads["W2"] = np.einsum("lpf,lph->fh", c["g"], dh3)
        du = (dh3 @ p["W2"].T) * (1.0 - c["g"] ** 2)
        grads["W1"] = np.einsum("lph,lpf->hf", c["h2"], du)
        grads["b1"] = du.sum(axis=(0, 1))
        dh2 = dh3 + du @ p["W1"].T

        grads["Wo"] = np.einsum("lph,lpk->hk", c["o"], dh2)
        do = dh2 @ p["Wo"].T
        a = c["a"]
        da = do @ c["v"].T
        dv = np.einsum("lpm,lph->mh", a, do)
        ds = a * (da - (a * da).sum(axis=-1, keepdims=True)) / np.sqrt(H)
        dq = ds @ c["k"]
        dk = np.einsum("lpm,lph->mh", ds, c["q"])
        grads["Wq"] = np.einsum("lph,lpk->hk", c["h1"], dq)
        grads["Wk"] = c["w"].T @ dk
        grads["Wv"] = c["w"].T @ dv
        dh1 = dh2 + dq @ p["Wq"].T

        lam = p["lam"][0]
        grads["lam"] = np.array([np.sum(dh1 * c["mix"])])
        dh0 = dh1 + lam * (np.einsum("kl,kph->lph", c["A"], dh1) - dh1)

        grads["W_in"] = np.einsum("lpd,lph->dh", c["x_lin"], dh0)
        grads["W_g"] = np.outer(c["pooled"], dh0.sum(axis=(0, 1)))
        grads["W_ctx"] = np.einsum("lpc,lph->ch", c["ctx"], dh0)
        grads["b_in"] = dh0.sum(axis=(0, 1))
        return grads

    def predict(self, z, t, cond, grid=None):
        return self.forward(z, t, cond, grid)[0]

    def predict_eps(self, z, t, cond):
        grid = getattr(z, "grid", None)
        z = getattr(z, "z", z)
        return self.forward(z, t, cond, grid)[0].eps_hat

    def __call__(self, z, t, cond):
        return self.predict_eps(z, t, cond)
