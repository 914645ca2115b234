import copy

import numpy as np
import pytest
from scipy.optimize import minimize

from fracnetid import (
    EMConfig,
    InputSequence,
    ModelParams,
    TimeSeriesMatrix,
    fit,
    m_step,
    q_value,
    simulate,
)
from fracnetid.em import (
    EStepQuantities,
    _residual_moments,
    build_estep_quantities,
    sigma_updates_paper_form,
)
from fracnetid.exceptions import CovarianceError
from fracnetid.kalman import run_filter

BLOCKS = ("A11", "A12", "A21", "A22", "B1", "B2")


def random_theta(rng, n, m, p, scale=0.3):
    return ModelParams(
        A11=rng.normal(size=(n, n)) * scale,
        A12=rng.normal(size=(n, m)) * scale,
        A21=rng.normal(size=(m, n)) * scale,
        A22=rng.normal(size=(m, m)) * scale,
        B1=rng.normal(size=(n, p)) * scale,
        B2=rng.normal(size=(m, p)) * scale,
        Sigma1=np.eye(n) * rng.uniform(0.02, 0.2),
        Sigma2=np.eye(m) * rng.uniform(0.02, 0.2),
        alpha_obs=rng.uniform(0.2, 1.2, n),
        alpha_lat=rng.uniform(0.2, 1.2, m),
    )


def make_estep(rng, n, m, p, T=18, theta=None):
    theta = theta or random_theta(rng, n, m, p)
    u = InputSequence(rng.normal(size=(p, T - 2))) if p else None
    obs, _ = simulate(theta, steps=T, inputs=u, seed=int(rng.integers(1 << 16)))
    filt = run_filter(theta, obs, inputs=u)
    eq = build_estep_quantities(obs, theta.alpha_obs, theta.alpha_lat, filt, u, p=p)
    return theta, eq


def test_observed_only_update_is_ols():
    rng = np.random.default_rng(0)
    n = 3
    theta = ModelParams(
        A11=rng.normal(size=(n, n)) * 0.2, A12=np.zeros((n, 0)),
        A21=np.zeros((0, n)), A22=np.zeros((0, 0)),
        B1=np.zeros((n, 0)), B2=np.zeros((0, 0)),
        Sigma1=0.05 * np.eye(n), Sigma2=np.zeros((0, 0)),
        alpha_obs=[0.4, 0.9, 0.7], alpha_lat=[],
    )
    obs, _ = simulate(theta, steps=30, seed=3)
    filt = run_filter(theta, obs)
    eq = build_estep_quantities(obs, theta.alpha_obs, theta.alpha_lat, filt, None, p=0)
    upd, ridged = m_step(theta, eq)
    assert not ridged

    X = obs.values[:, :-1]
    Y = eq.xr[:, 1:]
    want = np.linalg.solve(X @ X.T, X @ Y.T).T
    assert np.allclose(upd.A11, want, atol=1e-10)


def test_update_zeroes_q_gradient():
    rng = np.random.default_rng(1)
    for _ in range(3):
        n, m, p = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(0, 2))
        theta, eq = make_estep(rng, n, m, p)
        upd, _ = m_step(theta, eq)
        base_scale = 1.0
        for name in BLOCKS:
            M = getattr(upd, name)
            for idx in np.ndindex(M.shape):
                eps = 1e-6
                hi = copy.deepcopy(upd)
                lo = copy.deepcopy(upd)
                getattr(hi, name)[idx] += eps
                getattr(lo, name)[idx] -= eps
                g = (q_value(hi, eq) - q_value(lo, eq)) / (2 * eps)
                hess = (q_value(hi, eq) - 2 * q_value(upd, eq) + q_value(lo, eq)) / eps**2
                base_scale = max(base_scale, abs(hess))
                assert abs(g) < 1e-5 * max(1.0, base_scale)


def test_update_matches_derivative_free_maximizer():
    rng = np.random.default_rng(2)
    n, m, p = 1, 1, 1
    theta, eq = make_estep(rng, n, m, p, T=7)
    upd, _ = m_step(theta, eq)
    N = eq.N

    shapes = [getattr(upd, nm).shape for nm in BLOCKS]

    def pack(th):
        return np.concatenate([getattr(th, nm).ravel() for nm in BLOCKS])

    def unpack(v):
        th = copy.deepcopy(upd)
        i = 0
        for nm, sh in zip(BLOCKS, shapes):
            sz = int(np.prod(sh))
            getattr(th, nm)[...] = v[i : i + sz].reshape(sh)
            i += sz
        return th

    def neg_profiled_q(v):
        S1, S2 = _residual_moments(unpack(v), eq)
        _, d1 = np.linalg.slogdet(S1 / N)
        _, d2 = np.linalg.slogdet(S2 / (N - 1))
        return 0.5 * N * d1 + 0.5 * (N - 1) * d2

    x0 = pack(upd) + 0.05 * rng.normal(size=pack(upd).size)
    res = minimize(neg_profiled_q, x0, method="Powell",
                   options={"xtol": 1e-12, "ftol": 1e-14, "maxiter": 100000, "maxfev": 200000})
    assert np.abs(res.x - pack(upd)).max() < 1e-4
    # noise blocks equal the residual moments at the regression optimum
    S1, S2 = _residual_moments(upd, eq)
    assert np.allclose(upd.Sigma1, S1 / N, atol=1e-10)
    assert np.allclose(upd.Sigma2, S2 / (N - 1), atol=1e-10)


def test_zero_data_update_is_driven_by_covariance_terms():
    n, m, p = 2, 1, 1
    N = 8
    psi = np.zeros((m, N))
    psi[0, 0] = 1.0
    psi[0, 1] = -0.8
    eq = EStepQuantities(
        x=np.zeros((n, N + 1)),
        xr=np.zeros((n, N + 1)),
        z_hat_full=np.zeros((m, N)),
        P_hat_full=np.repeat(np.eye(m)[None], N, axis=0),
        u_full=np.zeros((p, N)),
        zr=np.zeros((m, N)),
        psi_lat=psi,
    )
    shape = ModelParams(
        A11=np.zeros((n, n)), A12=np.zeros((n, m)), A21=np.zeros((m, n)),
        A22=np.zeros((m, m)), B1=np.zeros((n, p)), B2=np.zeros((m, p)),
        Sigma1=np.eye(n), Sigma2=np.eye(m),
        alpha_obs=np.zeros(n), alpha_lat=np.array([0.8]),
    )
    upd, ridged = m_step(shape, eq)
    assert ridged
    # observed-block targets vanish, so those maps stay zero
    assert np.allclose(upd.A11, 0.0) and np.allclose(upd.A12, 0.0) and np.allclose(upd.B1, 0.0)
    assert np.allclose(upd.A21, 0.0) and np.allclose(upd.B2, 0.0)
    # latent self-map is pulled to the lag-1 coefficient by the P-hat terms
    assert upd.A22[0, 0] == pytest.approx(-0.8, rel=1e-6)
    # zero observed residuals floor-clamp the noise block
    assert np.allclose(np.linalg.eigvalsh(upd.Sigma1), 1e-10, rtol=1e-6)


def test_perfect_fit_with_unit_noise_scores_zero():
    n, m = 2, 1
    N = 10
    eq = EStepQuantities(
        x=np.zeros((n, N + 1)),
        xr=np.zeros((n, N + 1)),
        z_hat_full=np.zeros((m, N)),
        P_hat_full=np.zeros((N, m, m)),
        u_full=np.zeros((0, N)),
        zr=np.zeros((m, N)),
        psi_lat=np.zeros((m, N)),
    )
    theta = ModelParams(
        A11=np.zeros((n, n)), A12=np.zeros((n, m)), A21=np.zeros((m, n)),
        A22=np.zeros((m, m)), B1=np.zeros((n, 0)), B2=np.zeros((m, 0)),
        Sigma1=np.eye(n), Sigma2=np.eye(m),
        alpha_obs=np.zeros(n), alpha_lat=np.zeros(m),
    )
    assert q_value(theta, eq) == 0.0


def test_scaling_residuals_scales_trace_terms():
    rng = np.random.default_rng(3)
    theta, eq = make_estep(rng, 2, 1, 0, T=14)
    q1 = q_value(theta, eq)
    eq2 = EStepQuantities(
        x=np.sqrt(2.0) * eq.x,
        xr=np.sqrt(2.0) * eq.xr,
        z_hat_full=np.sqrt(2.0) * eq.z_hat_full,
        P_hat_full=2.0 * eq.P_hat_full,
        u_full=np.sqrt(2.0) * eq.u_full,
        zr=np.sqrt(2.0) * eq.zr,
        psi_lat=eq.psi_lat,
    )
    q2 = q_value(theta, eq2)
    # log-det terms unchanged; quadratic trace terms double
    N = eq.N
    S1, S2 = _residual_moments(theta, eq)
    W1 = np.linalg.inv(theta.Sigma1)
    W2 = np.linalg.inv(theta.Sigma2)
    trace_part = 0.5 * (np.trace(W1 @ S1) + np.trace(W2 @ S2))
    assert q2 == pytest.approx(q1 - trace_part, rel=1e-9)


def literal_q_transcription(theta, eq):
    """Term-by-term assembly of the expected log-likelihood integrand."""
    n, m, p = theta.n, theta.m, theta.p
    N = eq.N
    A11, A12, A21, A22 = theta.A11, theta.A12, theta.A21, theta.A22
    B1, B2 = theta.B1, theta.B2
    W1 = np.linalg.inv(theta.Sigma1)
    W2 = np.linalg.inv(theta.Sigma2)
    psi = eq.psi_lat

    tr1 = np.zeros((n, n))
    for k in range(1, N + 1):
        xk = eq.xr[:, k]
        xm = eq.x[:, k - 1]
        zm = eq.z_hat_full[:, k - 1]
        um = eq.u_full[:, k - 1]
        Pm = eq.P_hat_full[k - 1]
        tr1 += np.outer(xk, xk)
        tr1 -= 2 * A11 @ np.outer(xm, xk)
        tr1 -= 2 * A12 @ np.outer(zm, xk)
        tr1 -= 2 * B1 @ np.outer(um, xk)
        tr1 += A11 @ np.outer(xm, xm) @ A11.T
        tr1 += 2 * A12 @ np.outer(zm, xm) @ A11.T
        tr1 += 2 * B1 @ np.outer(um, xm) @ A11.T
        tr1 += A12 @ (Pm + np.outer(zm, zm)) @ A12.T
        tr1 += 2 * B1 @ np.outer(um, zm) @ A12.T
        tr1 += B1 @ np.outer(um, um) @ B1.T

    tr2 = np.zeros((m, m))
    for k in range(1, N):
        zk = eq.zr[:, k]
        xm = eq.x[:, k - 1]
        zm = eq.z_hat_full[:, k - 1]
        um = eq.u_full[:, k - 1]
        Pm = eq.P_hat_full[k - 1]
        tr2 += eq.P_hat_full[k]
        for j in range(1, k + 1):
            Cj = np.diag(psi[:, j])
            tr2 += Cj @ eq.P_hat_full[k - j] @ Cj.T
        tr2 += np.outer(zk, zk)
        tr2 -= 2 * A21 @ np.outer(xm, zk)
        C1 = np.diag(psi[:, 1])
        tr2 -= 2 * A22 @ (Pm @ C1.T + np.outer(zm, zk))
        tr2 -= 2 * B2 @ np.outer(um, zk)
        tr2 += A21 @ np.outer(xm, xm) @ A21.T
        tr2 += 2 * A21 @ np.outer(xm, zm) @ A22.T
        tr2 += 2 * A21 @ np.outer(xm, um) @ B2.T
        tr2 += A22 @ (Pm + np.outer(zm, zm)) @ A22.T
        tr2 += 2 * A22 @ np.outer(zm, um) @ B2.T
        tr2 += B2 @ np.outer(um, um) @ B2.T

    _, d1 = np.linalg.slogdet(theta.Sigma1)
    _, d2 = np.linalg.slogdet(theta.Sigma2)
    return (
        -0.5 * N * d1
        - 0.5 * (N - 1) * d2
        - 0.5 * np.trace(W1 @ tr1)
        - 0.5 * np.trace(W2 @ tr2)
    )


def test_q_matches_literal_transcription():
    rng = np.random.default_rng(4)
    theta, eq = make_estep(rng, 2, 2, 1, T=9)
    other = random_theta(rng, 2, 2, 1)
    other.alpha_obs = theta.alpha_obs
    other.alpha_lat = theta.alpha_lat
    for th in (theta, other):
        want = literal_q_transcription(th, eq)
        assert q_value(th, eq) == pytest.approx(want, rel=1e-10)


def test_paper_form_sigmas_match_moments_at_optimum():
    rng = np.random.default_rng(5)
    theta, eq = make_estep(rng, 2, 2, 1, T=16)
    upd, _ = m_step(theta, eq)
    s1_raw, s2_raw = sigma_updates_paper_form(upd, eq)
    assert np.allclose(upd.Sigma1, 0.5 * (s1_raw + s1_raw.T), atol=1e-8)
    assert np.allclose(upd.Sigma2, 0.5 * (s2_raw + s2_raw.T), atol=1e-8)


def test_q_rejects_indefinite_covariance():
    rng = np.random.default_rng(6)
    theta, eq = make_estep(rng, 2, 1, 0, T=10)
    bad = copy.deepcopy(theta)
    bad.Sigma1 = np.array([[1.0, 0.0], [0.0, -0.5]])
    with pytest.raises(CovarianceError):
        q_value(bad, eq)


def test_mstep_never_decreases_q():
    rng = np.random.default_rng(7)
    A = np.array([[0, 0.1, 0.2], [-0.01, -0.02, 0.3], [0.01, -0.03, -0.05]])
    sim = ModelParams(
        A11=A, A12=np.zeros((3, 0)), A21=np.zeros((0, 3)), A22=np.zeros((0, 0)),
        B1=np.zeros((3, 0)), B2=np.zeros((0, 0)), Sigma1=0.01 * np.eye(3),
        Sigma2=np.zeros((0, 0)), alpha_obs=[0.7, 1.1, 0.8], alpha_lat=[],
    )
    for seed in range(3):
        obs_full, _ = simulate(sim, steps=80, seed=seed)
        obs = TimeSeriesMatrix(values=obs_full.values[:2])
        theta = random_theta(np.random.default_rng(seed), 2, 1, 0)
        theta.alpha_obs = np.array([0.7, 1.1])
        theta.alpha_lat = np.array([0.8])
        for _ in range(10):
            filt = run_filter(theta, obs)
            eq = build_estep_quantities(obs, theta.alpha_obs, theta.alpha_lat, filt, None, p=0)
            q_before = q_value(theta, eq)
            theta, _ = m_step(theta, eq)
            q_after = q_value(theta, eq)
            assert q_after >= q_before - 1e-8


def test_fit_observed_only_is_single_step():
    rng = np.random.default_rng(8)
    theta = random_theta(rng, 2, 0, 0)
    obs, _ = simulate(theta, steps=30, seed=1)
    rep = fit(obs, theta.alpha_obs, [], m=0, p=0, config=EMConfig(seed=0))
    assert rep.iterations == 1
    assert rep.converged
    assert rep.q_trace.shape == (1,)


def test_fit_deterministic_given_seed():
    rng = np.random.default_rng(9)
    sim = random_theta(rng, 2, 1, 0)
    obs, _ = simulate(sim, steps=40, seed=4)
    cfg = EMConfig(seed=11, max_iter=15)
    r1 = fit(obs, sim.alpha_obs, sim.alpha_lat, m=1, p=0, config=cfg)
    r2 = fit(obs, sim.alpha_obs, sim.alpha_lat, m=1, p=0, config=cfg)
    assert np.array_equal(r1.q_trace, r2.q_trace)
    for name in BLOCKS:
        assert np.array_equal(getattr(r1.theta_final, name), getattr(r2.theta_final, name))


def test_fit_converged_trace_tail_is_flat():
    rng = np.random.default_rng(10)
    sim = random_theta(rng, 2, 1, 0)
    obs, _ = simulate(sim, steps=40, seed=4)
    rep = fit(obs, sim.alpha_obs, sim.alpha_lat, m=1, p=0,
              config=EMConfig(seed=3, max_iter=3000, tol=1e-6))
    assert rep.converged
    q = rep.q_trace
    tail = np.abs(np.diff(q[-6:])) / np.abs(q[-5:])
    assert tail[-1] < 1e-6

    # report serializes
    doc = rep.to_json_dict()
    assert doc["iterations"] == rep.iterations
    assert len(doc["q_trace"]) == rep.iterations


def test_fit_report_q_trace_length_matches_iterations():
    rng = np.random.default_rng(12)
    sim = random_theta(rng, 2, 1, 0)
    obs, _ = simulate(sim, steps=40, seed=2)
    rep = fit(obs, sim.alpha_obs, sim.alpha_lat, m=1, p=0, config=EMConfig(seed=0, max_iter=7))
    assert len(rep.q_trace) == rep.iterations == 7
    assert not rep.converged
