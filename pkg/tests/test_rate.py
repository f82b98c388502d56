import math

import numpy as np
import pytest
import scipy.integrate

from parpath.exceptions import ConfigurationError, DomainError, NumericalError
from parpath.rate import (
    RateProblem,
    RateSolution,
    kh_convolve,
    minimize_rate,
    optimality_report,
    rate_objective,
    smile_curve,
)
from parpath.volfn import ConstantVol, ExponentialVol, PolynomialVol

F_EXP = ExponentialVol(0.2, (1.0, 0.0))


# ---------------------------------------------------------------------------
# kernel convolution on control cells


def test_kh_convolve_zero_and_validation():
    np.testing.assert_array_equal(kh_convolve(np.zeros(6), 0.3), np.zeros(6))
    with pytest.raises(DomainError):
        kh_convolve(np.zeros(0), 0.3)
    with pytest.raises(DomainError):
        kh_convolve(np.zeros((2, 3)), 0.3)
    for H in (0.0, -0.1, 0.7):
        with pytest.raises(ConfigurationError):
            kh_convolve(np.ones(4), H)


def test_kh_convolve_flat_kernel_is_cumulative_integral():
    # H = 1/2 makes the kernel constant 1, so the output is the running
    # integral of g sampled at cell midpoints
    K = 8
    g = np.arange(1.0, K + 1.0)
    mids = (np.arange(K) + 0.5) / K
    out = kh_convolve(g, 0.5)
    expect = np.array([np.sum(np.minimum(np.maximum(m - np.arange(K) / K, 0.0), 1.0 / K) * g)
                       for m in mids])
    np.testing.assert_allclose(out, expect, rtol=1e-13)


def test_kh_convolve_constant_control_closed_form():
    K, H = 16, 0.3
    p = H + 0.5
    mids = (np.arange(K) + 0.5) / K
    out = kh_convolve(np.ones(K), H)
    expect = mids ** p / (p * math.gamma(p))
    np.testing.assert_allclose(out, expect, rtol=1e-12)


def test_kh_convolve_matches_quadrature():
    K, H = 6, 0.35
    g = np.array([1.0, -2.0, 3.0, 0.5, -1.0, 2.0])
    p = H + 0.5
    kappa = lambda u: u ** (p - 1.0) / math.gamma(p)
    edges = np.arange(K + 1) / K
    out = kh_convolve(g, H)
    for k in range(K):
        t = (k + 0.5) / K
        total = 0.0
        for c in range(K):
            a, b = edges[c], min(edges[c + 1], t)
            if b <= a:
                continue
            val, _ = scipy.integrate.quad(lambda s: kappa(t - s), a, b,
                                          limit=200)
            total += g[c] * val
        assert out[k] == pytest.approx(total, rel=1e-8)


# ---------------------------------------------------------------------------
# problem validation


def test_rate_problem_validation():
    ok = dict(f=F_EXP, sigma0=1.0, rho=-0.7, H=0.3)
    RateProblem(**ok)
    with pytest.raises(ConfigurationError):
        RateProblem(**{**ok, "rho": 1.0})
    with pytest.raises(ConfigurationError):
        RateProblem(**{**ok, "sigma0": 0.0})
    with pytest.raises(ConfigurationError):
        RateProblem(**{**ok, "H": 0.6})
    with pytest.raises(ConfigurationError):
        RateProblem(**ok, K=1)
    with pytest.raises(ConfigurationError):
        RateProblem(**ok, K=2.5)
    with pytest.raises(ConfigurationError):
        RateProblem(**ok, restarts=0)
    # vanishing vol at the base point leaves the misfit term undefined
    zero_at_base = PolynomialVol((((1, 0), 1.0),), e=2)
    with pytest.raises(ConfigurationError):
        RateProblem(**{**ok, "f": zero_at_base})
    prob = RateProblem(**ok, z_grid=[0.1, -0.2])
    assert prob.z_grid == (0.1, -0.2)


def test_rate_objective_validates_control():
    prob = RateProblem(f=F_EXP, sigma0=1.0, rho=0.0, H=0.3, K=8)
    with pytest.raises(DomainError):
        rate_objective(np.zeros(7), 0.1, prob)


# ---------------------------------------------------------------------------
# constant volatility: closed form for every rho


@pytest.mark.parametrize("rho", [-0.7, 0.0, 0.7])
@pytest.mark.parametrize("z", [0.1, -0.3])
def test_constant_f_closed_form(rho, z):
    c, sigma0 = 0.2, 1.0
    prob = RateProblem(f=ConstantVol(c), sigma0=sigma0, rho=rho, H=0.3,
                       K=16, restarts=2)
    sol = minimize_rate(z, prob)
    assert sol.value == pytest.approx(z ** 2 / (2.0 * sigma0 ** 2 * c ** 2), rel=1e-8)
    # the optimal control is flat at rho z / (sigma0 c)
    np.testing.assert_allclose(sol.minimizer, rho * z / (sigma0 * c) * np.ones(16),
                               atol=1e-5)
    assert sol.starts_tried == 2
    assert sol.grad_norm <= 1e-8 * (1.0 + sol.value)


# ---------------------------------------------------------------------------
# analytic gradient


def test_gradient_matches_central_differences():
    prob = RateProblem(f=F_EXP, sigma0=1.0, rho=-0.7, H=0.3, K=12, restarts=2)
    gen = np.random.default_rng(8)
    h = 1e-6
    for _ in range(20):
        g = gen.normal(size=12) * 0.6
        _, grad = rate_objective(g, 0.3, prob, return_grad=True)
        fd = np.empty(12)
        for k in range(12):
            gp, gm = g.copy(), g.copy()
            gp[k] += h
            gm[k] -= h
            fd[k] = (rate_objective(gp, 0.3, prob)
                     - rate_objective(gm, 0.3, prob)) / (2.0 * h)
        np.testing.assert_allclose(fd, grad, rtol=0.0, atol=1e-8 * (1.0 + np.abs(grad)).max())


# ---------------------------------------------------------------------------
# minimization quality


def test_minimizer_beats_random_search():
    # 1.2M sampled controls across four scales never undercut the solver
    K = 4
    prob = RateProblem(f=F_EXP, sigma0=1.0, rho=-0.7, H=0.3, K=K, restarts=4)
    sol = minimize_rate(0.3, prob)
    from parpath.rate import _kh_matrix
    W = _kh_matrix(0.3, K)
    dt = 1.0 / K
    gen = np.random.default_rng(77)
    best = np.inf
    for scale in (0.1, 0.3, 0.6, 1.2):
        G = gen.normal(size=(300000, K)) * scale
        V = G @ W.T
        FV = 0.2 * np.exp(V)
        A = dt * np.sum(FV * G, axis=1)
        B = dt * np.sum(FV * FV, axis=1)
        R = 0.3 + 0.7 * A
        F = 0.5 * dt * np.sum(G * G, axis=1) + R ** 2 / (2.0 * 0.51 * B)
        best = min(best, float(F.min()))
    assert sol.value <= best + 1e-9
    assert best <= sol.value * 1.02


def test_rate_stabilizes_in_control_resolution():
    vals = {}
    for K in (8, 16, 32, 64):
        prob = RateProblem(f=F_EXP, sigma0=1.0, rho=-0.7, H=0.3, K=K, restarts=4)
        vals[K] = minimize_rate(0.3, prob).value
    assert abs(vals[64] - vals[32]) < abs(vals[16] - vals[8])
    assert abs(vals[64] - vals[32]) <= 1e-3


def test_minimize_rate_deterministic():
    prob = RateProblem(f=F_EXP, sigma0=1.0, rho=-0.5, H=0.4, K=10, restarts=3)
    a = minimize_rate(0.2, prob)
    b = minimize_rate(0.2, prob)
    assert a.value == b.value
    np.testing.assert_array_equal(a.minimizer, b.minimizer)


def test_optimality_report_certifies_solution():
    prob = RateProblem(f=F_EXP, sigma0=1.0, rho=-0.7, H=0.3, K=16, restarts=4)
    sol = minimize_rate(0.25, prob)
    rep = optimality_report(prob, sol)
    assert rep.constraint_residual <= 1e-10
    assert rep.energy_gap <= 1e-10 * (1.0 + sol.value)
    assert rep.grad_norm <= 1e-8 * (1.0 + sol.value)


# ---------------------------------------------------------------------------
# smile transform


def test_smile_flat_for_constant_f():
    prob = RateProblem(f=ConstantVol(0.25), sigma0=2.0, rho=-0.4, H=0.3,
                       K=16, restarts=2)
    pts = smile_curve(prob, z_grid=[-0.4, -0.1, 0.0, 0.2, 0.5])
    for pt in pts:
        if pt.z == 0.0:
            assert pt.sigma_asym is None
            assert pt.rate == pytest.approx(0.0, abs=1e-12)
        else:
            assert pt.sigma_asym == pytest.approx(0.5, rel=1e-7)
        assert pt.restarts == 2


def test_smile_even_when_uncorrelated():
    prob = RateProblem(f=F_EXP, sigma0=1.0, rho=0.0, H=0.3, K=16, restarts=2,
                       z_grid=(-0.3, 0.3))
    pts = smile_curve(prob)
    assert pts[0].rate == pytest.approx(pts[1].rate, rel=1e-9)
    assert pts[0].sigma_asym == pytest.approx(pts[1].sigma_asym, rel=1e-9)


def test_smile_needs_grid():
    prob = RateProblem(f=F_EXP, sigma0=1.0, rho=0.0, H=0.3, K=8)
    with pytest.raises(ConfigurationError):
        smile_curve(prob)
