import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid

from ufpfts import _kernels_py, kernels, mcmc
from ufpfts.data import Dataset, Run
from ufpfts.design import ModelSpec
from ufpfts.mcmc import (ChainDraws, Panel, SamplerSettings, alpha_conditional,
                         initial_state, run_chain, run_chains, sample_inv_wishart,
                         theta_conditional, truncnorm_rvs, update_gamma, update_theta,
                         whiten)
from ufpfts.priors import PriorConfig
from ufpfts.synthetic import (desk_truth, grid_posterior_oracle, simulate_ar1,
                              simulate_dataset)

try:
    from ufpfts import _kernels as ckernels
except ImportError:  # extension not built
    ckernels = None


def batch_se(x, n_batches=50):
    """Monte Carlo standard error of a chain mean by batch means."""
    b = np.asarray(x)[: len(x) // n_batches * n_batches].reshape(n_batches, -1).mean(axis=1)
    return b.std(ddof=1) / math.sqrt(n_batches)


# -- whitening ---------------------------------------------------------------

def test_whiten_white_noise():
    u = np.array([0.3, -1.2, 2.0, 0.1])
    eps, wts = whiten(u, 0.0)
    np.testing.assert_array_equal(eps, u)
    np.testing.assert_array_equal(wts, 1.0)


def test_whiten_arithmetic():
    eps, wts = whiten(np.ones(3), 0.5)
    np.testing.assert_allclose(eps[1:], [0.5, 0.5])
    assert eps[0] == pytest.approx(math.sqrt(0.75))
    eps, wts = whiten(np.ones(3), 0.5, first_rule="conditional")
    np.testing.assert_array_equal(wts, [0, 1, 1])


def test_whiten_mask_restarts_series():
    u = np.array([1.0, 2.0, 9.0, 4.0, 5.0])
    obs = np.array([True, True, False, True, True])
    eps, wts = whiten(u, 0.5, obs)
    assert eps[2] == 0 and wts[2] == 0
    assert eps[3] == pytest.approx(4.0 * math.sqrt(0.75))
    assert eps[4] == pytest.approx(5.0 - 0.5 * 4.0)


def test_whiten_rejects_unit_root():
    with pytest.raises(ValueError):
        whiten(np.ones(3), 1.0)


def test_stationary_first_innovation_variance():
    rng = np.random.default_rng(5)
    theta, sig2 = 0.7, 0.3
    u = simulate_ar1(4, theta, sig2, rng, size=100_000)
    first = u[:, 0] * math.sqrt(1 - theta ** 2)
    assert np.var(first) == pytest.approx(sig2, rel=0.02)
    eps = u[:, 1:] - theta * u[:, :-1]
    assert np.var(eps) == pytest.approx(sig2, rel=0.02)


def test_panel_whitening_matches_series_whitening():
    rng = np.random.default_rng(0)
    counts = rng.uniform(10, 100, size=(3, 6))
    counts[1, 2] = np.nan
    counts[2, 0] = np.nan
    ds = Dataset((Run(1, 0, [-4, -2, 0, 2, 4, 6]), Run(2, 1, [-2, 0, 2])), 3,
                 (counts, rng.uniform(10, 100, size=(3, 3))))
    for rule in ("stationary", "conditional"):
        spec = ModelSpec.build(3, "quadratic", K=4, L=3, first_obs=rule)
        pan = Panel(spec, ds)
        pan.set_theta(0.6)
        u = rng.normal(size=pan.y.shape) * pan.obs
        eps = pan.whiten(u)
        for r, run in enumerate(ds.runs):
            n = run.times.size
            for s in range(3):
                ref, wts = whiten(u[r, s, :n], 0.6, ds.observed[r][s], rule)
                np.testing.assert_allclose(eps[r, s, :n] * pan.incl[r, s, :n], ref * wts,
                                           atol=1e-15)


# -- truncated normal and theta ---------------------------------------------

def test_truncnorm_against_closed_form():
    rng = np.random.default_rng(1)
    for mean, sd in [(0.2, 0.3), (0.95, 0.02), (-3.0, 0.5), (5.0, 0.1)]:
        x = truncnorm_rvs(rng, mean, sd, -1.0, 0.9, size=200_000)
        assert x.min() > -1.0 and x.max() < 0.9
        ref = stats.truncnorm((-1 - mean) / sd, (0.9 - mean) / sd, loc=mean, scale=sd)
        se = ref.std() / math.sqrt(x.size)
        assert abs(x.mean() - ref.mean()) < 4 * se + 1e-12


def test_truncnorm_scalar():
    x = truncnorm_rvs(np.random.default_rng(2), 0.0, 1.0, -1.0, 0.9)
    assert isinstance(x, float) and -1 < x < 0.9


def _ar_panel(T, first_obs="stationary", priors=None):
    times = np.arange(-2, 2 * T - 2, 2)
    ds = Dataset((Run(1, 0, times),), 2, (np.full((2, T), 50.0),))
    spec = ModelSpec.build(2, "quadratic", K=4, L=3, first_obs=first_obs,
                           priors=priors or PriorConfig())
    pan = Panel(spec, ds)
    st = initial_state(spec, ds, pan)
    st.sigma_sq = np.ones(2)
    return pan, st


def test_theta_conditional_matches_least_squares():
    pan, st = _ar_panel(5000, priors=PriorConfig(sigma_theta_sq=1e6))
    rng = np.random.default_rng(3)
    u = simulate_ar1(5000, 0.5, 1.0, rng, size=2)[None]
    mean, sd = theta_conditional(pan, st, u)
    ls = np.sum(u[..., 1:] * u[..., :-1]) / np.sum(u[..., :-1] ** 2)
    assert abs(mean - ls) < 1e-4
    assert abs(mean - 0.5) < 0.05


def test_theta_no_pairs_draws_truncated_prior():
    pan, st = _ar_panel(1, first_obs="conditional")
    assert not pan.prev.any()
    rng = np.random.default_rng(4)
    draws = np.empty(20000)
    for k in range(draws.size):
        update_theta(pan, st, rng)
        draws[k] = st.theta
    ref = stats.truncnorm(-1, 0.9)
    assert abs(draws.mean() - ref.mean()) < 4 * ref.std() / math.sqrt(draws.size)


def test_theta_never_exceeds_upper_bound():
    rng = np.random.default_rng(6)
    x = truncnorm_rvs(rng, 0.99, 0.01, -1.0, 0.9, size=100_000)
    assert x.max() < 0.9
    pan, st = _ar_panel(400)
    u = simulate_ar1(400, 0.89, 1.0, rng, size=2)[None]
    pan.y[:] = u + pan.mean(st)
    for _ in range(500):
        update_theta(pan, st, rng)
        assert -1 < st.theta < 0.9


def test_theta_update_targets_stationary_conditional():
    # update_theta is an MH-corrected kernel; its long-run mean must match the
    # exact full conditional including the series-start factor.
    pan, st = _ar_panel(6)
    rng = np.random.default_rng(8)
    pan.y[:] = simulate_ar1(6, 0.3, 1.0, rng, size=2)[None] * 3.0 + pan.mean(st)
    u = pan.residual(st)
    m, sd = theta_conditional(pan, st, u)
    q = float(np.sum(pan.first * u * u))

    def logp(x):
        th = x[:, 0]
        return (-0.5 * ((th - m) / sd) ** 2 + 0.5 * pan.n_first * np.log1p(-th ** 2)
                - 0.5 * (1 - th ** 2) * q)

    gmean, _ = grid_posterior_oracle(logp, [(-1 + 1e-9, 0.9)], n_points=4001)
    draws = np.empty(40000)
    for k in range(draws.size):
        update_theta(pan, st, rng)
        draws[k] = st.theta
    assert abs(draws.mean() - gmean[0]) < 4 * batch_se(draws)


# -- linear blocks --------------------------------------------------------------

def _tiny(first_obs="stationary", sigma=0.3):
    spec = ModelSpec.build(2, "quadratic", K=4, L=3, first_obs=first_obs)
    ds = Dataset((Run(1, 0, [-2, 0, 2]),), 2, (np.array([[30.0, 55.0, 80.0],
                                                           [12.0, 20.0, 5.0]]),))
    pan = Panel(spec, ds)
    st = initial_state(spec, ds, pan)
    st.sigma_sq = np.array([sigma, 2 * sigma])
    return spec, ds, pan, st


def test_alpha_conditional_collapses_to_prior_without_information():
    spec, ds, pan, st = _tiny()
    st.sigma_sq = np.full(2, 1e300)
    mean, cov = alpha_conditional(pan, st)
    np.testing.assert_allclose(mean, 0, atol=1e-12)
    np.testing.assert_allclose(cov, 1e4 * np.eye(4), rtol=1e-12)


def test_empty_run_gamma_drawn_from_prior():
    spec = ModelSpec.build(3, "quadratic", K=4, L=3)
    counts = np.full((3, 3), np.nan)
    ds = Dataset((Run(1, 0, [-2, 0, 2]), Run(2, 0, [-2, 0, 2])), 3,
                 (np.full((3, 3), 40.0), counts))
    pan = Panel(spec, ds)
    st = initial_state(spec, ds, pan)
    A = np.random.default_rng(0).normal(size=(4, 4))
    st.D = A @ A.T + np.eye(4)
    pan.set_theta(st.theta)
    rng = np.random.default_rng(9)
    g = np.empty((20000, 4))
    for k in range(g.shape[0]):
        update_gamma(pan, st, rng)
        g[k] = st.gamma[1]
    np.testing.assert_allclose(np.cov(g.T), st.D, rtol=0.06, atol=0.06)
    assert np.all(np.abs(g.mean(axis=0)) < 4 * np.sqrt(np.diag(st.D) / g.shape[0]))


# -- covariance updates -------------------------------------------------------

def test_inverse_wishart_scalar_conjugate():
    rng = np.random.default_rng(10)
    df, scale = 20.0, 3.5
    x = np.array([sample_inv_wishart(rng, df, np.array([[scale]]))[0, 0]
                  for _ in range(100_000)])
    mean = scale / (df - 2)
    var = 2 * scale ** 2 / ((df - 2) ** 2 * (df - 4))
    assert x.mean() == pytest.approx(mean, rel=0.02)
    assert x.var() == pytest.approx(var, rel=0.02)


def test_inverse_wishart_concentrates_with_df():
    rng = np.random.default_rng(11)
    M = np.array([[1.0, 0.3], [0.3, 0.5]])
    spread = []
    for df in (10, 100, 10_000):
        d = np.array([sample_inv_wishart(rng, df, (df - 3) * M) for _ in range(400)])
        spread.append(np.abs(d - M).mean())
    assert spread[0] > spread[1] > spread[2]
    assert spread[2] < 0.01


def test_update_D_posterior_parameters():
    spec, ds, pan, st = _tiny()
    rng = np.random.default_rng(12)
    st.gamma = np.array([[0.5, -0.2, 0.1, 0.3]])
    draws = np.array([(mcmc.update_D(pan, st, rng), st.D)[1] for _ in range(20000)])
    pr = spec.priors
    scale = pr.D_scale + np.outer(st.gamma[0], st.gamma[0])
    df = pr.n_D + 1
    np.testing.assert_allclose(draws.mean(axis=0), scale / (df - 4 - 1), atol=0.05)


# -- log variance ---------------------------------------------------------------

def test_log_variance_prior_without_data():
    rng = np.random.default_rng(13)
    pr = PriorConfig().resolve(4, 0)
    berr = np.ascontiguousarray(ModelSpec.build(10, K=4, L=4).Berr)
    eta = np.full(4, pr.eta_mean)
    w = np.zeros(10)
    zeros = np.zeros(10)
    tau = math.sqrt(pr.tau_eta_sq)
    E, Wd = [], []
    for _ in range(20000):
        kernels.slice_logvar(rng, eta, w, berr, zeros, zeros, pr.eta_mean, pr.eta_sd, tau,
                             1.0, 3 * tau, 32)
        E.append(eta.copy())
        Wd.append(w.copy())
    E, Wd = np.array(E), np.array(Wd)
    assert np.all(np.abs(E.mean(axis=0) - math.log(0.4)) < 4 * batch_se(E[:, 0]) + 0.01)
    np.testing.assert_allclose(E.std(axis=0), pr.eta_sd, rtol=0.05)
    np.testing.assert_allclose(Wd.std(axis=0), tau, rtol=0.05)
    # exp of the prior-mean log variance is 0.4 at every bin
    np.testing.assert_allclose(np.exp(berr @ E.mean(axis=0)), 0.4, rtol=0.02)


def test_log_variance_single_bin_grid_oracle():
    rng = np.random.default_rng(14)
    n, sse, m, g, tau = 15.0, 4.0, math.log(0.4), 0.3125853728120899, 1e-4
    berr = np.ones((1, 1))
    eta, w = np.array([m]), np.zeros(1)
    draws = np.empty(30000)
    for k in range(draws.size):
        kernels.slice_logvar(rng, eta, w, berr, np.array([n]), np.array([sse]), m, g, tau,
                             1.0, 3 * tau, 32)
        draws[k] = math.exp(eta[0] + w[0])

    def logp(x):
        v = x[:, 0]
        return -0.5 * n * v - 0.5 * sse * np.exp(-v) - 0.5 * ((v - m) / g) ** 2

    lo, hi = m - 3, m + 3
    xs = np.linspace(lo, hi, 4001)
    # E[sigma^2] by trapezoid quadrature over log sigma^2
    lp = logp(xs[:, None])
    p = np.exp(lp - lp.max())
    ref = trapezoid(p * np.exp(xs), xs) / trapezoid(p, xs)
    assert draws.mean() == pytest.approx(ref, rel=0.01)


@pytest.mark.skipif(ckernels is None, reason="compiled kernels not built")
def test_compiled_and_python_slice_kernels_agree():
    berr = np.ascontiguousarray(ModelSpec.build(25, K=5, L=5).Berr)
    n = np.arange(25, dtype=float) % 7
    sse = n * 0.3 + 0.1
    state = {}
    for name, mod in (("c", ckernels), ("py", _kernels_py)):
        rng = np.random.default_rng(15)
        eta, w = np.full(5, -0.9), np.zeros(25)
        for _ in range(50):
            mod.slice_logvar(rng, eta, w, berr, n, sse, -0.9, 0.31, 0.1, 1.0, 0.3, 32)
        state[name] = (eta, w, rng.random())
    np.testing.assert_allclose(state["c"][0], state["py"][0], rtol=0, atol=1e-10)
    np.testing.assert_allclose(state["c"][1], state["py"][1], rtol=0, atol=1e-10)
    assert state["c"][2] == state["py"][2]   # both consumed the same uniforms


@pytest.mark.skipif(ckernels is None, reason="compiled kernels not built")
def test_compiled_and_python_bspline_agree():
    from ufpfts.splines import make_basis
    b = make_basis(3, (1, 102), 5)
    x = np.random.default_rng(0).uniform(1, 102, 500)
    np.testing.assert_allclose(ckernels.bspline_design(b.knots, 3, x),
                               _kernels_py.bspline_design(b.knots, 3, x), atol=1e-14)


# -- whole chains ---------------------------------------------------------------

@pytest.fixture(scope="module")
def chain_setup():
    truth = desk_truth(seed=21, n_runs=4, n_bins=10, K=4, L=3, variant="random-jump-quadratic")
    ds, _ = simulate_dataset(truth)
    return truth.spec, ds


def test_chain_is_deterministic(chain_setup):
    spec, ds = chain_setup
    s = SamplerSettings(iterations=60, burn_in=10, thin=2, seed=5)
    a, b = run_chain(spec, ds, s), run_chain(spec, ds, s)
    for k in ("alpha", "Delta", "gamma", "Upsilon", "theta", "D", "W", "eta", "w", "deviance"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))
    c = run_chain(spec, ds, replace(s, chain=1))
    assert not np.array_equal(a.theta, c.theta)
    assert a.n_draws == s.n_stored == 25


def test_python_fallback_reproduces_compiled_chain(chain_setup, monkeypatch):
    if ckernels is None:
        pytest.skip("compiled kernels not built")
    spec, ds = chain_setup
    s = SamplerSettings(iterations=30, burn_in=5, seed=2)
    a = run_chain(spec, ds, s)
    monkeypatch.setattr(kernels, "slice_logvar", _kernels_py.slice_logvar)
    b = run_chain(spec, ds, s)
    np.testing.assert_allclose(a.eta, b.eta, atol=1e-8)
    np.testing.assert_allclose(a.theta, b.theta, atol=1e-8)


def test_chain_invariants(chain_setup):
    spec, ds = chain_setup
    d = run_chain(spec, ds, SamplerSettings(iterations=150, burn_in=50, seed=3))
    np.testing.assert_allclose(d.sigma_sq, np.exp(d.eta @ spec.Berr.T + d.w), rtol=1e-12)
    assert np.all((d.theta > -1) & (d.theta < 0.9))
    assert np.all(np.linalg.eigvalsh(d.D)[:, 0] > 0)
    assert np.all(np.linalg.eigvalsh(d.W)[:, 0] > 0)
    assert np.all(np.isfinite(d.deviance))


def test_recorded_deviance_matches_recomputation(chain_setup):
    from ufpfts.posterior import recompute_deviance
    spec, ds = chain_setup
    d = run_chain(spec, ds, SamplerSettings(iterations=40, burn_in=30, seed=4))
    np.testing.assert_allclose(recompute_deviance(d, spec, ds), d.deviance, rtol=1e-10)


def test_run_chains_and_draw_bookkeeping(chain_setup):
    spec, ds = chain_setup
    chains = run_chains(spec, ds, SamplerSettings(iterations=20, burn_in=10, seed=1), 2,
                        max_workers=1)
    both = ChainDraws.concat(chains)
    assert both.n_draws == 20
    np.testing.assert_array_equal(np.unique(both.chain_index), [0, 1])
    parts = both.split()
    np.testing.assert_array_equal(parts[1].theta, chains[1].theta)


def test_settings_validation():
    with pytest.raises(ValueError):
        SamplerSettings(iterations=10, burn_in=10)
    with pytest.raises(ValueError):
        SamplerSettings(thin=0)


def test_degenerate_one_run_two_bins():
    spec, ds, pan, st = _tiny()
    d = run_chain(spec, ds, SamplerSettings(iterations=300, burn_in=100, seed=0))
    assert d.n_draws == 200 and np.all(np.isfinite(d.alpha))
