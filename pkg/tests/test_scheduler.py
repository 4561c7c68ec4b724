import numpy as np
import pytest

from onestep_sr.models.run_configs import SchedulerConfig
from onestep_sr.services.scheduler import Scheduler
from onestep_sr.services.tensor_ops import Rng, gaussian_fill


@pytest.fixture
def scheduler():
    return Scheduler(SchedulerConfig())


def test_alpha_plus_sigma_is_one(scheduler):
    for t in range(scheduler.horizon + 1):
        assert scheduler.alpha(t) + scheduler.sigma(t) == pytest.approx(1.0, abs=1e-15)


def test_omega_endpoints_and_monotonicity(scheduler):
    omegas = [scheduler.omega(t) for t in range(scheduler.horizon + 1)]

    assert omegas[0] == 1.0
    assert omegas[-1] == 0.0
    assert all(a > b for a, b in zip(omegas, omegas[1:]))


def test_timesteps_outside_horizon_are_rejected(scheduler):
    with pytest.raises(ValueError):
        scheduler.sigma(-1)
    with pytest.raises(ValueError):
        scheduler.omega(1001)


def test_default_protocol_samples_within_range(scheduler):
    rng = Rng(0)
    draws = [scheduler.sample_timestep(rng) for _ in range(3000)]

    assert min(draws) >= 70 and max(draws) <= 650
    assert min(draws) < 100 and max(draws) > 620


def test_lq_protocol_presets():
    cfg = SchedulerConfig.from_protocol('lq')

    assert (cfg.tau_g, cfg.t_min, cfg.t_max) == (999, 20, 980)
    with pytest.raises(ValueError):
        SchedulerConfig.from_protocol('mq')


def test_invalid_ranges_are_rejected():
    with pytest.raises(ValueError):
        SchedulerConfig(t_min=700, t_max=600)
    with pytest.raises(ValueError):
        SchedulerConfig(tau_g=0)


def test_perturb_endpoints(scheduler):
    z = gaussian_fill(Rng(1), (1, 2, 3, 3))
    eps = gaussian_fill(Rng(2), z.shape)

    assert np.array_equal(scheduler.perturb(z, 0, eps), z)
    assert np.allclose(scheduler.perturb(z, scheduler.horizon, eps), eps)


def test_noise_pair_shares_timestep_and_noise(scheduler):
    rng = Rng(3)
    z_hat = gaussian_fill(rng.split(0), (2, 4, 2, 2))
    z_H = gaussian_fill(rng.split(1), (2, 4, 2, 2))
    pair = scheduler.build_noise_pair(Rng(4), z_hat, z_H)
    sigma = scheduler.sigma(pair.t)

    assert np.allclose(pair.z_tilde_hat - pair.z_tilde_H, (1.0 - sigma) * (z_hat - z_H))
    assert np.allclose(pair.z_tilde_hat, (1.0 - sigma) * z_hat + sigma * pair.eps)


def test_noise_pair_is_reproducible(scheduler):
    z = np.zeros((1, 4, 2, 2))
    a = scheduler.build_noise_pair(Rng(5), z, z)
    b = scheduler.build_noise_pair(Rng(5), z, z)

    assert a.t == b.t and np.array_equal(a.eps, b.eps)


def test_noise_pair_shape_mismatch(scheduler):
    with pytest.raises(ValueError):
        scheduler.build_noise_pair(Rng(6), np.zeros((1, 4, 2, 2)), np.zeros((1, 4, 2, 3)))
