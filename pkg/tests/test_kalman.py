import numpy as np
import pytest

from fracnetid import InputSequence, ModelParams, TimeSeriesMatrix, run_filter
from fracnetid.exceptions import NumericalSingularityError


def random_params(rng, n, m, p, alpha_obs=None, alpha_lat=None, s1=0.05, s2=0.08):
    def cov(d, s):
        M = rng.normal(size=(d, d)) * 0.1
        return s * np.eye(d) + M @ M.T

    return ModelParams(
        A11=rng.normal(size=(n, n)) * 0.3,
        A12=rng.normal(size=(n, m)) * 0.4,
        A21=rng.normal(size=(m, n)) * 0.3,
        A22=rng.normal(size=(m, m)) * 0.3,
        B1=rng.normal(size=(n, p)) * 0.5,
        B2=rng.normal(size=(m, p)) * 0.5,
        Sigma1=cov(n, s1),
        Sigma2=cov(m, s2),
        alpha_obs=rng.uniform(0.2, 1.2, n) if alpha_obs is None else np.asarray(alpha_obs, float),
        alpha_lat=rng.uniform(0.2, 1.2, m) if alpha_lat is None else np.asarray(alpha_lat, float),
    )


def classical_kf(y, F, H, Q, R, ctrl, z0, P0):
    """Textbook filter: z_k = F z_{k-1} + ctrl_{k-1} + w, y_k = H z_k + v."""
    m = F.shape[0]
    K_steps = y.shape[1]
    z_hat = np.zeros((m, K_steps))
    P_hat = np.zeros((K_steps, m, m))
    z = z0.copy()
    P = P0.copy()
    for k in range(K_steps):
        z = F @ z + ctrl[:, k]
        P = F @ P @ F.T + Q
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        z = z + K @ (y[:, k] - H @ z)
        P = (np.eye(m) - K @ H) @ P
        z_hat[:, k] = z
        P_hat[k] = P
    return z_hat, P_hat


def test_zero_measurement_map_keeps_prior():
    rng = np.random.default_rng(1)
    n, m = 2, 2
    params = random_params(rng, n, m, 0)
    params.A12 = np.zeros((n, m))
    obs = TimeSeriesMatrix(values=rng.normal(size=(n, 20)))
    res = run_filter(params, obs)
    assert np.allclose(res.gains, 0.0, atol=1e-14)
    assert np.allclose(res.z_hat, res.z_tilde, atol=1e-14)
    assert np.allclose(res.P_hat, res.P_tilde, atol=1e-10)


def test_zero_orders_match_classical_filter():
    rng = np.random.default_rng(2)
    for trial in range(5):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 3))
        p = int(rng.integers(0, 2))
        params = random_params(rng, n, m, p, alpha_obs=np.zeros(n), alpha_lat=np.zeros(m))
        T = 52
        x = rng.normal(size=(n, T))
        u = InputSequence(rng.normal(size=(p, T - 2)))
        obs = TimeSeriesMatrix(values=x)
        z0 = rng.normal(size=m)
        P0 = np.eye(m) * rng.uniform(0.5, 2.0)
        res = run_filter(params, obs, inputs=u if p else None, z0=z0, P0=P0)

        # with zero orders the fractional difference is the identity, so the
        # pseudo-measurement is x_{k+1} - A11 x_k - B1 u_k
        N = T - 1
        u_full = np.zeros((p, N))
        if p:
            u_full[:, 1:] = u.values
        y = x[:, 2:] - params.A11 @ x[:, 1 : T - 1]
        ctrl = params.A21 @ x[:, 0 : T - 2]
        if p:
            y = y - params.B1 @ u_full[:, 1:]
            ctrl = ctrl + params.B2 @ u_full[:, : T - 2]
        z_ref, P_ref = classical_kf(
            y, params.A22, params.A12, params.Sigma2, params.Sigma1, ctrl, z0, P0
        )
        assert np.allclose(res.z_hat, z_ref, atol=1e-8)
        assert np.allclose(res.P_hat, P_ref, atol=1e-8)


def test_scalar_instance_matches_hand_evaluation():
    # m = n = 1, T = 4 (filter steps k = 1..2), order 0.5 on both blocks
    a11, a12, a21, a22 = 0.3, 0.8, 0.2, -0.4
    s1, s2 = 0.5, 0.7
    alpha_o, alpha_l = 0.5, 0.5
    x = np.array([[1.0, 2.0, -1.0, 0.5]])
    z0, P0 = 0.3, 2.0

    params = ModelParams(
        A11=[[a11]], A12=[[a12]], A21=[[a21]], A22=[[a22]],
        B1=np.zeros((1, 0)), B2=np.zeros((1, 0)),
        Sigma1=[[s1]], Sigma2=[[s2]],
        alpha_obs=[alpha_o], alpha_lat=[alpha_l],
    )
    res = run_filter(params, TimeSeriesMatrix(values=x), z0=[z0], P0=[[P0]])

    # coefficient values for order 1/2: 1, -1/2, -1/8, -1/16
    c = [1.0, -0.5, -0.125, -0.0625]

    # step k=1
    zt1 = a22 * z0 + a21 * x[0, 0] - c[1] * z0
    Pt1 = (a22 - c[1]) ** 2 * P0 + s2
    xr2 = x[0, 2] + c[1] * x[0, 1] + c[2] * x[0, 0]
    y1 = xr2 - a11 * x[0, 1]
    K1 = Pt1 * a12 / (s1 + a12 * Pt1 * a12)
    zh1 = zt1 + K1 * (y1 - a12 * zt1)
    Ph1 = 1.0 / (a12 * a12 / s1 + 1.0 / Pt1)

    # step k=2
    zt2 = a22 * zh1 + a21 * x[0, 1] - c[1] * zh1 - c[2] * z0
    Pt2 = (a22 - c[1]) ** 2 * Ph1 + c[2] ** 2 * P0 + s2
    xr3 = x[0, 3] + c[1] * x[0, 2] + c[2] * x[0, 1] + c[3] * x[0, 0]
    y2 = xr3 - a11 * x[0, 2]
    K2 = Pt2 * a12 / (s1 + a12 * Pt2 * a12)
    zh2 = zt2 + K2 * (y2 - a12 * zt2)
    Ph2 = 1.0 / (a12 * a12 / s1 + 1.0 / Pt2)

    assert res.z_tilde[0] == pytest.approx([zt1, zt2], rel=1e-12)
    assert res.P_tilde[:, 0, 0] == pytest.approx([Pt1, Pt2], rel=1e-12)
    assert res.z_hat[0] == pytest.approx([zh1, zh2], rel=1e-12)
    assert res.P_hat[:, 0, 0] == pytest.approx([Ph1, Ph2], rel=1e-12)
    assert res.gains[:, 0, 0] == pytest.approx([K1, K2], rel=1e-12)


def test_information_form_matches_joseph_identity():
    rng = np.random.default_rng(3)
    params = random_params(rng, 3, 2, 0)
    obs = TimeSeriesMatrix(values=rng.normal(size=(3, 30)))
    res = run_filter(params, obs)
    for k in range(res.n_steps):
        lhs = res.P_hat[k]
        rhs = (np.eye(2) - res.gains[k] @ params.A12) @ res.P_tilde[k]
        assert np.allclose(lhs, rhs, atol=1e-8)


def test_update_never_increases_covariance():
    rng = np.random.default_rng(4)
    params = random_params(rng, 2, 2, 0)
    obs = TimeSeriesMatrix(values=rng.normal(size=(2, 40)))
    res = run_filter(params, obs)
    for k in range(res.n_steps):
        diff = res.P_tilde[k] - res.P_hat[k]
        w = np.linalg.eigvalsh(0.5 * (diff + diff.T))
        assert w.min() > -1e-8


def test_decoupled_trailing_latent_keeps_prior_and_leaves_rest():
    rng = np.random.default_rng(5)
    n, m = 2, 2
    params = random_params(rng, n, m, 0)
    T = 25
    obs = TimeSeriesMatrix(values=rng.normal(size=(n, T)))
    res_base = run_filter(params, obs)

    # append one latent channel with zero coupling everywhere
    params_ext = ModelParams(
        A11=params.A11,
        A12=np.hstack([params.A12, np.zeros((n, 1))]),
        A21=np.vstack([params.A21, np.zeros((1, n))]),
        A22=np.block([[params.A22, np.zeros((m, 1))], [np.zeros((1, m)), np.zeros((1, 1))]]),
        B1=params.B1,
        B2=np.zeros((m + 1, 0)),
        Sigma1=params.Sigma1,
        Sigma2=np.block([[params.Sigma2, np.zeros((m, 1))], [np.zeros((1, m)), np.eye(1)]]),
        alpha_obs=params.alpha_obs,
        alpha_lat=np.concatenate([params.alpha_lat, [0.0]]),
    )
    res_ext = run_filter(params_ext, obs)
    assert np.allclose(res_ext.z_hat[:m], res_base.z_hat, atol=1e-9)
    # decoupled channel keeps its prior mean (zero)
    assert np.allclose(res_ext.z_hat[m], 0.0, atol=1e-12)


def test_gain_shrinks_as_measurement_noise_grows():
    rng = np.random.default_rng(6)
    params = random_params(rng, 2, 1, 0)
    obs = TimeSeriesMatrix(values=rng.normal(size=(2, 30)))
    norms = []
    for c in (1.0, 10.0, 100.0, 1000.0):
        scaled = ModelParams(
            A11=params.A11, A12=params.A12, A21=params.A21, A22=params.A22,
            B1=params.B1, B2=params.B2,
            Sigma1=c * params.Sigma1, Sigma2=params.Sigma2,
            alpha_obs=params.alpha_obs, alpha_lat=params.alpha_lat,
        )
        res = run_filter(scaled, obs)
        norms.append(np.linalg.norm(res.gains))
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_singular_observation_covariance_rejected():
    params = ModelParams(
        A11=np.zeros((1, 1)), A12=np.zeros((1, 1)), A21=np.zeros((1, 1)),
        A22=np.array([[0.5]]), B1=np.zeros((1, 0)), B2=np.zeros((1, 0)),
        Sigma1=np.zeros((1, 1)), Sigma2=np.eye(1),
        alpha_obs=[0.5], alpha_lat=[0.5],
    )
    obs = TimeSeriesMatrix(values=np.random.default_rng(0).normal(size=(1, 6)))
    with pytest.raises(NumericalSingularityError):
        run_filter(params, obs)


def test_singular_predicted_covariance_names_step():
    # Sigma2 = 0 with P0 = 0 collapses the first predicted covariance
    params = ModelParams(
        A11=np.zeros((1, 1)), A12=np.array([[1.0]]), A21=np.zeros((1, 1)),
        A22=np.array([[0.5]]), B1=np.zeros((1, 0)), B2=np.zeros((1, 0)),
        Sigma1=np.eye(1), Sigma2=np.zeros((1, 1)),
        alpha_obs=[0.5], alpha_lat=[0.5],
    )
    obs = TimeSeriesMatrix(values=np.random.default_rng(0).normal(size=(1, 6)))
    with pytest.raises(NumericalSingularityError, match="step 1"):
        run_filter(params, obs, P0=np.zeros((1, 1)))
