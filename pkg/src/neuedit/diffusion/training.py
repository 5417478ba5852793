"""Noise-prediction objective and its optimizer loop."""

import numpy as np
from sklearn.base import BaseEstimator

from .._validation import DivergenceError
from ..codec import LatentVideo
from .denoiser import DenoiserModel
from .sampling import denoise, forward_diffuse, invert
from .schedule import make_schedule


def _latent(z):
    return z if isinstance(z, LatentVideo) else LatentVideo(z, _square_grid(np.shape(z)[1]))


def _square_grid(P):
    side = int(round(np.sqrt(P)))
    return (side, P // side)


def training_loss(model, z0, cond, sched, seed, return_grads=False):
    """MSE between drawn noise and the prediction at a uniformly drawn step."""
    cond = np.asarray(cond, dtype=np.float64)
    if cond.ndim != 2 or cond.shape[0] < 1:
        raise ValueError("conditioning needs at least one feature row")
    rng = np.random.default_rng(seed)
    lat = _latent(z0)
    t = int(rng.integers(1, sched.T + 1))
    eps = rng.standard_normal(lat.z.shape)
    return _loss_at(model, lat, cond, sched, t, eps, return_grads)


def _loss_at(model, lat, cond, sched, t, eps, return_grads):
    zt = forward_diffuse(lat.z, t, eps, sched)
    if not hasattr(model, "forward"):
        err = model(zt, t, cond) - eps
        return float(np.mean(err ** 2))
    out, cache = model.forward(zt, t, cond, lat.grid)
    err = out.eps_hat - eps
    loss = float(np.mean(err ** 2))
    if not return_grads:
        return loss
    return loss, model.backward(cache, 2.0 * err / err.size)


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.n = 0

    def step(self, params, grads):
        self.n += 1
        c1 = 1.0 - self.b1 ** self.n
        c2 = 1.0 - self.b2 ** self.n
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train(model, dataset, sched, epochs=1, lr=2e-3, seed=0, batch_size=1,
          clip_norm=1.0, steps=None, callback=None):
    """Adam on the noise-prediction loss.

    ``dataset`` is a list of ``(latent, cond)`` pairs. Mini-batches follow a
    per-epoch permutation drawn from ``seed``; gradients are summed in batch
    order so results do not depend on anything but the seed. ``steps``
    caps the number of optimizer updates. Returns ``(model, loss_curve)``
    with one entry per update.
    """
    if not dataset:
        raise ValueError("training needs a non-empty dataset")
    data = [(_latent(z), np.asarray(c, dtype=np.float64)) for z, c in dataset]
    rng = np.random.default_rng(seed)
    opt = Adam(model.params, lr=lr)
    curve = []
    total = steps if steps is not None else epochs * int(np.ceil(len(data) / batch_size))
    order = np.array([], dtype=int)
    while len(curve) < total:
        if len(order) == 0:
            order = rng.permutation(len(data))
        batch, order = order[:batch_size], order[batch_size:]
        grads = {k: np.zeros_like(v) for k, v in model.params.items()}
        loss = 0.0
        for i in batch:
            lat, cond = data[i]
            t = int(rng.integers(1, sched.T + 1))
            eps = rng.standard_normal(lat.z.shape)
            li, gi = _loss_at(model, lat, cond, sched, t, eps, True)
            loss += li / len(batch)
            for k in grads:
                grads[k] += gi[k] / len(batch)
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at step {len(curve)}")
        if clip_norm:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > clip_norm:
                for k in grads:
                    grads[k] *= clip_norm / norm
        opt.step(model.params, grads)
        curve.append(loss)
        if callback is not None:
            callback(len(curve), loss)
    return model, np.asarray(curve)


class TextVideoDiffusion(BaseEstimator):
    """Estimator face of the denoiser: ``fit`` trains, ``invert``/``denoise`` sample.

    ``fit`` takes a list of ``(latent, cond)`` pairs. With ``warm_start``
    the existing ``model_`` is refined instead of re-initialized, which is
    how per-video tuning starts from a pretrained checkpoint.
    """

    def __init__(self, T_steps=200, schedule="linear", width=32, text_dim=32,
                 mlp_width=64, latent_dim=192, time_freqs=8, pos_freqs=2,
                 temporal=True, prior_rank=48, steps=2000, lr=2e-3, batch_size=4,
                 clip_norm=1.0, seed=0, warm_start=False):
        self.T_steps = T_steps
        self.schedule = schedule
        self.width = width
        self.text_dim = text_dim
        self.mlp_width = mlp_width
        self.latent_dim = latent_dim
        self.time_freqs = time_freqs
        self.pos_freqs = pos_freqs
        self.temporal = temporal
        self.prior_rank = prior_rank
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.seed = seed
        self.warm_start = warm_start

    @property
    def schedule_(self):
        return make_schedule(self.T_steps, self.schedule)

    def _new_model(self):
        return DenoiserModel(
            latent_dim=self.latent_dim, width=self.width, text_dim=self.text_dim,
            mlp_width=self.mlp_width, time_freqs=self.time_freqs,
            pos_freqs=self.pos_freqs, temporal=self.temporal,
            alpha_bar=self.schedule_.alpha_bar, seed=self.seed,
        )

    def fit(self, X, y=None):
        X = list(X)
        if not (self.warm_start and hasattr(self, "model_")):
            self.model_ = self._new_model()
            if self.prior_rank:
                self.model_.fit_prior([z for z, _ in X], rank=self.prior_rank)
        _, curve = train(
            self.model_, X, self.schedule_, lr=self.lr, seed=self.seed,
            batch_size=self.batch_size, clip_norm=self.clip_norm, steps=self.steps,
        )
        self.loss_curve_ = curve
        return self

    def predict_eps(self, z, t, cond):
        return self.model_.predict_eps(z, t, cond)

    def invert(self, z0, cond, n_steps=50):
        return invert(self.model_, z0, cond, self.schedule_, n_steps)

    def denoise(self, z_init, cond, n_steps=50):
        return denoise(self.model_, z_init, cond, self.schedule_, n_steps)

    def score(self, X, y=None, seed=0):
        """Negative mean noise-prediction loss over ``X`` (higher is better)."""
        losses = [training_loss(self.model_, z, c, self.schedule_, seed + i)
                  for i, (z, c) in enumerate(X)]
        return -float(np.mean(losses))
