import numpy as np
import pytest

from rfquant.errors import (
    DimMismatch,
    LayerOutOfRange,
    NonOddActivation,
    NonpositiveVariance,
    ShapeMismatch,
)
from rfquant.gep import (
    Sigma0Spec,
    activation_moments,
    gep_recursion,
    gh_standard_normal,
    mc_covariance,
    op_norm_diff,
    rho_coeffs,
    sample_equivalent_gaussian,
    sigma_chain,
)
from rfquant.rf_model import build_network, network_from_matrices, quantize

# E[z tanh z] and E[tanh^2 z] for z ~ N(0, s2), by adaptive quadrature (frozen)
TANH_S2_1 = (0.605705509602159, 0.39429449039784126)
TANH_S2_4 = (1.4589550629722408, 0.63526123425694)


def test_gh_rule_integrates_polynomials():
    z, w = gh_standard_normal(40)
    assert abs(w.sum() - 1) < 1e-14
    assert abs(w @ z**2 - 1) < 1e-12 and abs(w @ z**4 - 3) < 1e-11


def test_identity_moments():
    assert np.allclose(activation_moments("identity", 2.0), (2.0, 2.0), atol=1e-12)
    r1, r2 = rho_coeffs("identity", 0.7)
    assert abs(r1 - 1) < 1e-12 and r2 == 0.0


@pytest.mark.parametrize("s2, ref, nodes", [(1.0, TANH_S2_1, 200), (4.0, TANH_S2_4, 300)])
def test_tanh_moments_against_quadrature_oracle(s2, ref, nodes):
    assert np.allclose(activation_moments("tanh", s2, nodes=nodes), ref, atol=1e-10, rtol=0)


def test_tanh_default_nodes_at_large_variance():
    # slower convergence near the poles of tanh; see the docstring
    assert np.allclose(activation_moments("tanh", 4.0), TANH_S2_4, atol=2e-8, rtol=0)


def test_tanh_monte_carlo_oracle():
    z = np.random.default_rng(0).standard_normal(10**6)
    v = z * np.tanh(z)
    se = v.std() / np.sqrt(z.size)
    assert abs(activation_moments("tanh", 1.0)[0] - v.mean()) < 3 * se


def test_tanh_stein_identity():
    # E[z tanh z] = E[tanh'(z)] = 1 - E[tanh^2 z] at unit variance
    m1, m2 = activation_moments("tanh", 1.0)
    assert abs(m1 + m2 - 1) < 1e-12


def test_scaled_erf_closed_forms():
    for s2 in (0.3, 1.0, 3.0):
        m1, m2 = activation_moments("scaled_erf", s2)
        assert abs(m1 - s2 * np.sqrt(2 / np.pi) / np.sqrt(1 + s2)) < 1e-12
        assert abs(m2 - 2 / np.pi * np.arcsin(s2 / (1 + s2))) < 1e-12


def test_small_variance_limit():
    r1, r2 = rho_coeffs("tanh", 1e-8)
    assert abs(r1 - 1) < 1e-7 and r2 < 1e-14


def test_rho2_nonnegative_on_grid():
    for kind in ("identity", "tanh", "scaled_erf"):
        for s2 in np.geomspace(1e-4, 10, 100):
            r1, r2 = rho_coeffs(kind, s2)
            m2 = activation_moments(kind, s2)[1]
            assert r2 >= 0 and r1 * r1 * s2 <= m2 * (1 + 1e-12)


def test_moment_errors():
    with pytest.raises(NonpositiveVariance):
        activation_moments("tanh", 0.0)
    with pytest.raises(ValueError):
        activation_moments("tanh", 1.0, nodes=10)


def test_identity_recursion_is_exact(rng):
    W = rng.standard_normal((5, 8)) / np.sqrt(8)
    net = network_from_matrices([W], "identity")
    st = gep_recursion(Sigma0Spec.isotropic(8), net)
    assert np.allclose(st.cov[1], W @ W.T / 8, atol=1e-15)
    assert st.rho2_sq == (0.0,)


def test_orthonormal_rows_isometry(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((16, 16)))
    net = network_from_matrices([Q[:6]], "identity")
    st = gep_recursion(Sigma0Spec.isotropic(16), net)
    assert np.allclose(st.cov[1], np.eye(6) / 16, atol=1e-15)
    assert abs(st.sigma_sq[1] - 1 / 16) < 1e-15


def test_trace_only_path_matches_materialized():
    net = build_network([64, 48, 32, 16], "tanh", seed=3)
    s0 = Sigma0Spec.diagonal(np.linspace(0.5, 1.5, 64) / 64)
    full = gep_recursion(s0, net)
    lazy = gep_recursion(s0, net, materialize=False)
    assert np.allclose(full.sigma_sq, lazy.sigma_sq, rtol=0, atol=1e-10)
    for l in range(1, 4):
        assert abs(np.trace(full.cov[l]) / full.cov[l].shape[0] - full.sigma_sq[l]) < 1e-10


def test_recursion_errors():
    with pytest.raises(NonOddActivation):
        gep_recursion(Sigma0Spec.isotropic(4), build_network([4, 4], "relu", allow_non_odd=True))
    with pytest.raises(DimMismatch):
        gep_recursion(Sigma0Spec.isotropic(5), build_network([4, 4], "tanh"))


def test_sigma_chain_matches_rho_update():
    st = sigma_chain("tanh", 1.0, 3)
    for l in range(3):
        assert abs(st.sigma_sq[l + 1] - (st.rho1[l] ** 2 * st.sigma_sq[l] + st.rho2_sq[l])) < 1e-15


def test_equivalent_gaussian_identity_chain(rng):
    W1 = rng.standard_normal((6, 8)) / np.sqrt(8)
    W2 = rng.standard_normal((4, 6)) / np.sqrt(6)
    net = network_from_matrices([W1, W2], "identity")
    st = gep_recursion(Sigma0Spec.isotropic(8), net)
    G = sample_equivalent_gaussian(st, net, 2, 5, seed=1)
    Z = np.random.default_rng(1).standard_normal((5, 8)) / np.sqrt(8)
    assert np.allclose(G, Z @ W1.T @ W2.T, atol=1e-14)
    assert np.array_equal(G, sample_equivalent_gaussian(st, net, 2, 5, seed=1))
    with pytest.raises(LayerOutOfRange):
        sample_equivalent_gaussian(st, net, 3, 5, seed=1)


def test_equivalent_gaussian_covariance():
    net = build_network([32, 24, 16], "tanh", seed=4)
    st = gep_recursion(Sigma0Spec.isotropic(32), net)
    n = 10**5
    G = sample_equivalent_gaussian(st, net, 2, n, seed=2)
    err = op_norm_diff(G.T @ G / n, st.cov[2])
    assert err <= 5 * np.linalg.norm(st.cov[2], 2) * np.sqrt(16 / n)


def test_mc_covariance_identity_and_determinism():
    net = build_network([16, 8], "identity", seed=0)
    s0 = Sigma0Spec.isotropic(16)
    W = net.layers[0].dense()
    M = mc_covariance(net, s0, 200_000, seed=3)
    assert op_norm_diff(M, W @ W.T / 16) < 0.02 * np.linalg.norm(W @ W.T / 16, 2)
    assert np.array_equal(M, mc_covariance(net, s0, 200_000, seed=3))


def test_mc_diagonal_matches_trace_chain():
    net = build_network([256, 256], "tanh", seed=1)
    st = gep_recursion(Sigma0Spec.isotropic(256), net, materialize=False)
    M = mc_covariance(net, Sigma0Spec.isotropic(256), 20_000, seed=5)
    # per-coordinate squares are about 2 sigma^4 in variance; average over 256 coordinates
    se = np.sqrt(2.0) * st.sigma_sq[1] / np.sqrt(20_000 * 256)
    assert abs(np.mean(np.diag(M)) - st.sigma_sq[1]) < 3 * se * 4


def test_control_variate_is_unbiased_for_identity():
    net = build_network([12, 10], "identity", seed=2)
    s0 = Sigma0Spec.isotropic(12)
    W = net.layers[0].dense()
    assert np.allclose(mc_covariance(net, s0, 3000, seed=1, control_variate=True), W @ W.T / 12, atol=1e-15)


def test_op_norm_diff():
    A = np.diag([3.0, 1.0])
    assert op_norm_diff(A, A) == 0.0
    assert abs(op_norm_diff(A, np.zeros((2, 2))) - 3.0) < 1e-12
    rng = np.random.default_rng(7)
    for d in (8, 32, 64):
        X = rng.standard_normal((d, d))
        Y = rng.standard_normal((d, d))
        A, B = X + X.T, Y + Y.T
        ref = np.max(np.abs(np.linalg.eigvalsh(A - B)))
        assert abs(op_norm_diff(A, B, iters=100) - ref) <= 1e-6 * ref
    with pytest.raises(ShapeMismatch):
        op_norm_diff(np.eye(2), np.eye(3))


def test_quantized_covariance_as_close_as_gaussian():
    d = 512
    g = build_network([d, d], "tanh", seed=11)
    q = quantize(g, packed=False)
    s0 = Sigma0Spec.isotropic(d)
    ref_g = gep_recursion(s0, g).cov[1]
    ref_q = gep_recursion(s0, q).cov[1]
    eg = op_norm_diff(mc_covariance(g, s0, 50 * d, seed=1, control_variate=True), ref_g) / np.linalg.norm(ref_g, 2)
    eq = op_norm_diff(mc_covariance(q, s0, 50 * d, seed=1, control_variate=True), ref_q) / np.linalg.norm(ref_q, 2)
    assert eq <= 1.5 * eg
