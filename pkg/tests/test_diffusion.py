import numpy as np
import pytest

from neuedit._validation import DivergenceError
from neuedit.codec import LatentVideo
from neuedit.diffusion.denoiser import PARAM_ORDER, DenoiserModel
from neuedit.diffusion.kl import kl_oracle, posterior
from neuedit.diffusion.sampling import (ddim_invert_step, ddim_step, denoise, forward_diffuse,
                                        invert, predict_x0, timesteps)
from neuedit.diffusion.schedule import NoiseSchedule, make_schedule, schedule_from_dict
from neuedit.diffusion.training import TextVideoDiffusion, train, training_loss

RNG = np.random.default_rng(1234)


# -- schedule ---------------------------------------------------------------
@pytest.mark.parametrize("kind", ["linear", "cosine"])
@pytest.mark.parametrize("T", [2, 50, 200, 1000])
def test_schedule_invariants(kind, T):
    s = make_schedule(T, kind)
    assert s.T == T
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert s.abar(0) == 1.0
    a = s.alpha(np.arange(1, T + 1))
    assert np.all((a > 0) & (a < 1))
    if T >= 50:
        assert s.alpha_bar[-1] < 0.05


def test_schedule_errors_and_round_trip():
    with pytest.raises(ValueError):
        make_schedule(1)
    with pytest.raises(ValueError):
        make_schedule(10, "sigmoid")
    s = make_schedule(200, "cosine")
    np.testing.assert_array_equal(schedule_from_dict(s.to_dict()).alpha_bar, s.alpha_bar)
    with pytest.raises(ValueError):
        s.abar(201)


# -- forward diffusion --------------------------------------------------------
def test_forward_boundaries():
    s = NoiseSchedule(np.array([1.0, 0.5, 1e-14]))
    z0, eps = RNG.standard_normal((2, 4, 3)), RNG.standard_normal((2, 4, 3))
    np.testing.assert_array_equal(forward_diffuse(z0, 1, eps, s), z0)
    np.testing.assert_allclose(forward_diffuse(z0, 3, eps, s), eps, atol=1e-6)
    with pytest.raises(ValueError):
        forward_diffuse(z0, 1, eps[:1], s)
    with pytest.raises(ValueError):
        forward_diffuse(z0, 0, eps, s)


def test_forward_variance_monte_carlo(sched):
    t = 80
    z0 = np.full(10_000, 0.3)
    eps = np.random.default_rng(0).standard_normal(10_000)
    zt = forward_diffuse(z0, t, eps, sched)
    assert abs(zt.var() / (1 - sched.abar(t)) - 1) < 0.05


def test_forward_mean_scaling(sched):
    z0 = RNG.standard_normal((3, 5, 4))
    eps = RNG.standard_normal(z0.shape)
    eps -= eps.mean()
    zt = forward_diffuse(z0, 120, eps, sched)
    assert zt.mean() == pytest.approx(np.sqrt(sched.abar(120)) * z0.mean(), abs=1e-12)


# -- training loss ------------------------------------------------------------
def _exact_eps_model(z0, sched):
    def model(zt, t, cond):
        a = sched.abar(t)
        return (zt - np.sqrt(a) * z0) / np.sqrt(1 - a)
    return model


def test_loss_oracle_and_zero_model(sched):
    z0 = RNG.standard_normal((2, 4, 6))
    cond = np.eye(3, 5)
    assert training_loss(_exact_eps_model(z0, sched), z0, cond, sched, 3) < 1e-20
    zero = lambda zt, t, c: np.zeros_like(zt)
    losses = [training_loss(zero, z0, cond, sched, s) for s in range(100)]
    assert abs(np.mean(losses) - 1.0) < 0.1


def test_loss_is_deterministic(sched):
    m = DenoiserModel(latent_dim=12, width=8, text_dim=5, mlp_width=8, alpha_bar=sched.alpha_bar)
    z0 = RNG.standard_normal((2, 4, 12))
    w = RNG.standard_normal((3, 5))
    assert training_loss(m, z0, w, sched, 9) == training_loss(m, z0, w, sched, 9)
    with pytest.raises(ValueError):
        training_loss(m, z0, np.zeros((0, 5)), sched, 0)


# -- DDIM ---------------------------------------------------------------------
def test_ddim_step_zero_eps_scaling(sched):
    z0 = RNG.standard_normal((2, 3, 4))
    t = 57
    zt = np.sqrt(sched.abar(t)) * z0
    np.testing.assert_allclose(ddim_step(zt, 0 * z0, t, sched), np.sqrt(sched.abar(t - 1)) * z0, atol=1e-13)
    np.testing.assert_allclose(ddim_invert_step(zt, 0 * z0, t, sched), np.sqrt(sched.abar(t + 1)) * z0,
                               atol=1e-13)


def test_ddim_round_trips(sched):
    z, e = RNG.standard_normal((2, 3, 4)), RNG.standard_normal((2, 3, 4))
    for t in (1, 2, 100, 200):
        back = ddim_invert_step(ddim_step(z, e, t, sched), e, t - 1, sched)
        np.testing.assert_allclose(back, z, rtol=1e-10, atol=1e-12)
    for t in (0, 99, 199):
        back = ddim_step(ddim_invert_step(z, e, t, sched), e, t + 1, sched)
        np.testing.assert_allclose(back, z, rtol=1e-10, atol=1e-12)


def test_ddim_boundary_prediction(sched):
    T = sched.T
    zt = RNG.standard_normal((2, 3, 4))
    eps = zt / np.sqrt(1 - sched.abar(T))
    assert np.abs(predict_x0(zt, eps, T, sched)).max() < 1e-12
    # a full jump to t = 0 emits the predicted clean latent
    assert np.abs(ddim_step(zt, eps, T, sched, 0)).max() < 1e-12
    z0 = RNG.standard_normal((2, 3, 4))
    np.testing.assert_allclose(ddim_invert_step(z0, 0 * z0, 0, sched, T), np.sqrt(sched.abar(T)) * z0)


def test_ddim_range_errors(sched):
    z = np.zeros((1, 1, 1))
    with pytest.raises(ValueError):
        ddim_step(z, z, 0, sched)
    with pytest.raises(ValueError):
        ddim_step(z, z, sched.T + 1, sched)
    with pytest.raises(ValueError):
        ddim_invert_step(z, z, sched.T, sched)


def test_timestep_subsequence(sched):
    ts = timesteps(sched, 50)
    assert ts[0] == 0 and ts[-1] == sched.T and len(ts) == 51
    assert np.all(np.diff(ts) > 0)
    with pytest.raises(ValueError):
        timesteps(sched, 0)


def test_denoise_with_matched_oracle(sched):
    z0 = RNG.standard_normal((2, 4, 6))
    zT = RNG.standard_normal(z0.shape)
    out, traj = denoise(_exact_eps_model(z0, sched), zT, None, sched, 20, return_trajectory=True)
    assert np.mean((out - z0) ** 2) < 1e-6
    assert len(traj) == 21


def test_single_step_denoise(sched):
    zT = RNG.standard_normal((2, 4, 6))
    const = RNG.standard_normal(zT.shape)
    model = lambda z, t, c: const
    np.testing.assert_array_equal(denoise(model, zT, None, sched, 1), ddim_step(zT, const, sched.T, sched, 0))


def _time_only_model(shape):
    table = np.random.default_rng(5).standard_normal((201,) + shape)
    return lambda z, t, c: table[t]


def test_invert_denoise_round_trip(sched):
    z0 = RNG.standard_normal((2, 4, 6))
    model = _time_only_model(z0.shape)
    for n in (1, 10, 50, 200):
        zT = invert(model, z0, None, sched, n)
        assert np.mean((denoise(model, zT, None, sched, n) - z0) ** 2) < 1e-6


def test_zero_model_inversion_is_identity(sched):
    z0 = RNG.standard_normal((2, 4, 6))
    zero = lambda z, t, c: np.zeros_like(z)
    zT = invert(zero, z0, None, sched, 50)
    np.testing.assert_allclose(denoise(zero, zT, None, sched, 50), z0, atol=1e-12)
    other = invert(zero, z0 + 0.01, None, sched, 50)
    assert not np.allclose(zT, other)


def test_invert_keeps_latent_type(sched):
    lat = LatentVideo(RNG.standard_normal((2, 4, 6)), (2, 2))
    zero = lambda z, t, c: np.zeros_like(z.z if hasattr(z, "z") else z)
    zT, traj = invert(zero, lat, None, sched, 5, return_trajectory=True)
    assert isinstance(zT, LatentVideo) and zT.grid == (2, 2) and len(traj) == 6


# -- KL oracle ----------------------------------------------------------------
def test_kl_matched_and_shifted(sched):
    z0, zn = RNG.standard_normal((3, 4)), RNG.standard_normal((3, 4))
    t = 70
    mean, var = posterior(z0, zn, t, sched)
    assert kl_oracle(z0, zn, mean, var, t, sched) == 0.0
    delta = 0.37
    kl = kl_oracle(z0, zn, mean + delta, var, t, sched)
    assert kl == pytest.approx(z0.size * delta ** 2 / (2 * var), rel=1e-10)
    for _ in range(20):
        mu = RNG.standard_normal(z0.shape)
        v = RNG.uniform(0.01, 2.0)
        assert kl_oracle(z0, zn, mu, v, t, sched) >= 0.0
    with pytest.raises(ValueError):
        kl_oracle(z0, zn, mean, 0.0, t, sched)
    with pytest.raises(ValueError):
        posterior(z0, zn, sched.T, sched)


def test_posterior_matches_ddpm_coefficients(sched):
    # with z0 fixed, the posterior mean is the mean of q(z_t | z_{t+1}, z0) by Bayes' rule
    t = 10
    a_t, a_n = sched.abar(t), sched.abar(t + 1)
    alpha = a_n / a_t
    z0, zn = np.array([0.5]), np.array([-0.2])
    prec = 1 / (1 - a_t) + alpha / (1 - alpha)
    mean_bayes = (np.sqrt(a_t) * z0 / (1 - a_t) + np.sqrt(alpha) * zn / (1 - alpha)) / prec
    mean, var = posterior(z0, zn, t, sched)
    np.testing.assert_allclose(mean, mean_bayes, rtol=1e-12)
    assert var == pytest.approx(1 / prec, rel=1e-12)


# -- denoiser and training ----------------------------------------------------
def _small_model(sched, seed=0):
    return DenoiserModel(latent_dim=12, width=8, text_dim=5, mlp_width=8, time_freqs=2,
                         pos_freqs=1, alpha_bar=sched.alpha_bar, seed=seed)


def test_attention_rows_are_stochastic(sched):
    m = _small_model(sched)
    out = m.predict(RNG.standard_normal((3, 4, 12)), 50, RNG.standard_normal((6, 5)) * 3, (2, 2))
    assert out.attention.shape == (3, 4, 6)
    assert np.all(out.attention >= 0)
    np.testing.assert_allclose(out.attention.sum(-1), 1.0, atol=1e-12)
    again = m.predict(RNG.standard_normal((3, 4, 12)) * 0, 50, np.zeros((6, 5)), (2, 2))
    np.testing.assert_allclose(again.attention, 1 / 6)


def test_forward_is_deterministic(sched):
    m = _small_model(sched)
    z, w = RNG.standard_normal((3, 4, 12)), RNG.standard_normal((6, 5))
    np.testing.assert_array_equal(m.predict(z, 9, w).eps_hat, m.predict(z, 9, w).eps_hat)
    with pytest.raises(ValueError):
        m.predict(np.zeros((1, 4, 11)), 9, w)


def test_parameter_budget():
    assert DenoiserModel().n_params() <= 50_000


def test_flat_params_round_trip(sched):
    m = _small_model(sched)
    flat = m.flat_params()
    other = _small_model(sched, seed=7)
    other.set_flat_params(flat)
    for k in PARAM_ORDER:
        np.testing.assert_array_equal(other.params[k], m.params[k])


def test_identity_prior_reduces_to_plain_skip(sched):
    m = DenoiserModel(latent_dim=12, width=8, text_dim=5, mlp_width=8, alpha_bar=sched.alpha_bar)
    m.params["W_out"][:] = 0
    z = RNG.standard_normal((2, 4, 12))
    t = 40
    eps = m.predict_eps(z, t, np.eye(2, 5))
    np.testing.assert_allclose(eps, np.sqrt(1 - sched.abar(t)) * z, atol=1e-12)


def _toy_data(sched, n=3):
    rng = np.random.default_rng(11)
    return [(LatentVideo(rng.standard_normal((2, 4, 12)) * 0.5 + 0.3, (2, 2)), rng.standard_normal((4, 5)))
            for _ in range(n)]


def test_training_decreases_loss(sched):
    m = _small_model(sched)
    data = _toy_data(sched)
    m.fit_prior([z for z, _ in data], rank=4)
    _, curve = train(m, data, sched, lr=5e-3, seed=0, steps=400)
    assert len(curve) == 400
    assert curve[-100:].mean() < curve[:100].mean()


def test_training_is_bit_reproducible(sched):
    data = _toy_data(sched)
    a, _ = train(_small_model(sched), data, sched, seed=4, steps=30, batch_size=2)
    b, _ = train(_small_model(sched), data, sched, seed=4, steps=30, batch_size=2)
    np.testing.assert_array_equal(a.flat_params(), b.flat_params())


def test_training_errors(sched):
    with pytest.raises(ValueError):
        train(_small_model(sched), [], sched)
    m = _small_model(sched)
    m.params["W_out"][:] = np.nan
    with pytest.raises(DivergenceError):
        train(m, _toy_data(sched), sched, steps=2)


def test_estimator_api(sched):
    data = _toy_data(sched, 4)
    est = TextVideoDiffusion(latent_dim=12, width=8, text_dim=5, mlp_width=8, time_freqs=2,
                             pos_freqs=1, prior_rank=4, steps=40)
    assert est.get_params()["steps"] == 40
    est.fit(data)
    assert len(est.loss_curve_) == 40
    assert np.isfinite(est.score(data))
    z0, w = data[0]
    zT = est.invert(z0, w, 10)
    assert est.denoise(zT, w, 10).z.shape == z0.z.shape
    first = est.model_.flat_params().copy()
    est.set_params(warm_start=True, steps=5).fit(data)
    assert not np.array_equal(first, est.model_.flat_params())
