"""Closed-form KL between the forward posterior and a Gaussian reverse step."""

import numpy as np

from .sampling import predict_x0


def posterior(z0, z_next, t, sched):
    """Mean and variance of q(z_t | z_{t+1}, z_0) for 1 <= t <= T - 1."""
    if not 1 <= t < sched.T:
        raise ValueError(f"posterior needs 1 <= t < T, got t={t}")
    a_t, a_n = sched.abar(t), sched.abar(t + 1)
    beta_n = 1.0 - a_n / a_t
    c0 = np.sqrt(a_t) * beta_n / (1.0 - a_n)
    cn = np.sqrt(1.0 - beta_n) * (1.0 - a_t) / (1.0 - a_n)
    mean = c0 * np.asarray(z0) + cn * np.asarray(z_next)
    var = (1.0 - a_t) / (1.0 - a_n) * beta_n
    return mean, var


def kl_oracle(z0, z_tplus1, mu_theta, var_theta, t, sched):
    """Sum over elements of KL(q(z_t | z_{t+1}, z_0) || N(mu_theta, var_theta))."""
    var_theta = np.asarray(var_theta, dtype=np.float64)
    if np.any(var_theta <= 0):
        raise ValueError("var_theta must be positive")
    mean_q, var_q = posterior(z0, z_tplus1, t, sched)
    mean_q, mu = np.broadcast_arrays(mean_q, np.asarray(mu_theta, dtype=np.float64))
    per = 0.5 * (np.log(var_theta / var_q) + (var_q + (mean_q - mu) ** 2) / var_theta - 1.0)
    return float(np.sum(np.broadcast_to(per, mean_q.shape)))


def model_posterior(model, z_tplus1, t, cond, sched):
    """Reverse-step Gaussian implied by an eps-predictor (fixed posterior variance)."""
    eps = model.predict_eps(z_tplus1, t + 1, cond)
    x0_hat = predict_x0(z_tplus1, eps, t + 1, sched)
    return posterior(x0_hat, z_tplus1, t, sched)
