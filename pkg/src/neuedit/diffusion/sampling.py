"""Forward noising and deterministic DDIM stepping in both directions.

The update is written with cumulative fractions:

    z_s = sqrt(abar_s / abar_t) z_t
          + (sqrt(1/abar_s - 1) - sqrt(1/abar_t - 1)) sqrt(abar_s) eps

which is the x0-prediction form ``sqrt(abar_s) x0_hat + sqrt(1 - abar_s) eps``.
The same expression with s > t is the inversion step.
"""

import numpy as np

from ..codec import LatentVideo


def _arr(z):
    return z.z if isinstance(z, LatentVideo) else np.asarray(z, dtype=np.float64)


def _wrap(like, z):
    return like.with_z(z) if isinstance(like, LatentVideo) else z


def forward_diffuse(z0, t, eps, sched):
    """Closed-form sample of q(z_t | z_0)."""
    z = _arr(z0)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z.shape:
        raise ValueError(f"noise shape {eps.shape} != latent shape {z.shape}")
    if not 1 <= t <= sched.T:
        raise ValueError(f"t={t} outside [1, {sched.T}]")
    a = sched.abar(t)
    return _wrap(z0, np.sqrt(a) * z + np.sqrt(1.0 - a) * eps)


def predict_x0(z_t, eps_hat, t, sched):
    a = sched.abar(t)
    return (_arr(z_t) - np.sqrt(1.0 - a) * np.asarray(eps_hat)) / np.sqrt(a)


def _move(z, eps, t_from, t_to, sched):
    a_from, a_to = sched.abar(t_from), sched.abar(t_to)
    coef = np.sqrt(1.0 / a_to - 1.0) - np.sqrt(1.0 / a_from - 1.0)
    return np.sqrt(a_to / a_from) * z + coef * np.sqrt(a_to) * eps


def ddim_step(z_t, eps_hat, t, sched, t_prev=None):
    """One deterministic (eta = 0) step from t down to ``t_prev`` (default t - 1)."""
    t_prev = t - 1 if t_prev is None else t_prev
    if not 1 <= t <= sched.T or not 0 <= t_prev < t:
        raise ValueError(f"invalid step {t} -> {t_prev} for T={sched.T}")
    return _wrap(z_t, _move(_arr(z_t), np.asarray(eps_hat), t, t_prev, sched))


def ddim_invert_step(z_t, eps_hat, t, sched, t_next=None):
    """Inverse of :func:`ddim_step`: from t up to ``t_next`` (default t + 1)."""
    t_next = t + 1 if t_next is None else t_next
    if not 0 <= t < sched.T or not t < t_next <= sched.T:
        raise ValueError(f"invalid inversion step {t} -> {t_next} for T={sched.T}")
    return _wrap(z_t, _move(_arr(z_t), np.asarray(eps_hat), t, t_next, sched))


def timesteps(sched, n_steps):
    """Uniform sub-sequence 0 = t_0 < ... < t_n = T."""
    if not 1 <= n_steps <= sched.T:
        raise ValueError(f"n_steps must be in [1, {sched.T}]")
    return np.round(np.linspace(0, sched.T, n_steps + 1)).astype(int)


def _eps(model, z, t, cond):
    if hasattr(model, "predict_eps"):
        return model.predict_eps(z, t, cond)
    return model(z, t, cond)


def denoise(model, z_init, cond, sched, n_steps, return_trajectory=False):
    """DDIM sampling from T down to 0 using the model's noise predictions."""
    ts = timesteps(sched, n_steps)
    z = _arr(z_init)
    traj = [z]
    for hi, lo in zip(ts[:0:-1], ts[-2::-1]):
        eps = _eps(model, _wrap(z_init, z), int(hi), cond)
        z = _move(z, eps, int(hi), int(lo), sched)
        traj.append(z)
    out = _wrap(z_init, z)
    if return_trajectory:
        return out, [_wrap(z_init, x) for x in traj]
    return out


def invert(model, z0, cond, sched, n_steps, return_trajectory=False):
    """DDIM inversion from 0 up to T.

    Each step evaluates the model at the step's destination timestep, so a
    model whose prediction depends on t alone is inverted exactly by
    :func:`denoise`.
    """
    ts = timesteps(sched, n_steps)
    z = _arr(z0)
    traj = [z]
    for lo, hi in zip(ts[:-1], ts[1:]):
        eps = _eps(model, _wrap(z0, z), int(hi), cond)
        z = _move(z, eps, int(lo), int(hi), sched)
        traj.append(z)
    out = _wrap(z0, z)
    if return_trajectory:
        return out, [_wrap(z0, x) for x in traj]
    return out
