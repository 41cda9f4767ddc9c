import numpy as np
import pytest

from cellfree_ota.channel import complex_normal
from cellfree_ota.combiner import (
    EstimatedStatistics,
    NmseAccumulator,
    estimate_frame,
    lmmse_chunk_estimate,
    ls_chunk_estimate,
    nmse_db,
    unpack,
    unpack_gramian,
)
from cellfree_ota.fronthaul import chunk
from cellfree_ota.uplink import LocalStatistics
from cellfree_ota.fronthaul import pack


class TestLmmseChunk:
    def test_degenerate_prior_returns_mean(self, rng):
        mu = complex_normal(rng, (4,))
        z = complex_normal(rng, (4,))
        xhat = lmmse_chunk_estimate(z, mu, np.zeros((4, 4)), rho_c=2.0)
        assert np.allclose(xhat, mu)

    def test_scalar_anchor(self):
        # mu=0, C=1, rho_c=1, z=1 -> 0.5
        xhat = lmmse_chunk_estimate(np.array([1.0 + 0j]), np.zeros(1), np.eye(1), 1.0)
        assert xhat[0] == pytest.approx(0.5)

    def test_high_power_limit_matches_ls(self, rng):
        C = np.diag(rng.uniform(0.5, 2.0, 4)).astype(complex)
        mu = complex_normal(rng, (4,))
        z = complex_normal(rng, (4,))
        rho = 1e8
        lm = lmmse_chunk_estimate(z, mu, C, rho)
        ls = ls_chunk_estimate(z, rho)
        assert np.linalg.norm(lm - ls) / np.linalg.norm(ls) < 1e-3

    def test_zero_noise_is_exact(self, rng):
        # with noise_var=0 the Bayesian gain collapses to the LS inverse
        C = np.diag([1.0, 0.5, 0.0, 2.0]).astype(complex)
        x = complex_normal(rng, (4,))
        x[2] = 0.7  # variance-zero entry must equal its mean
        mu = np.array([0, 0, 0.7, 0], dtype=complex)
        rho = 3.0
        z = np.sqrt(rho) * x
        xhat = lmmse_chunk_estimate(z, mu, C, rho, noise_var=0.0)
        assert np.allclose(xhat, x, atol=1e-10)


class TestLsChunk:
    def test_arithmetic(self):
        assert ls_chunk_estimate(np.array([2.0]), 4.0)[0] == pytest.approx(1.0)

    def test_noise_free_recovery(self, rng):
        x = complex_normal(rng, (6,))
        assert np.allclose(ls_chunk_estimate(np.sqrt(2.5) * x, 2.5), x)

    def test_unbiasedness(self, rng):
        x = complex_normal(rng, (4,))
        rho = 3.0
        trials = 100_000
        z = np.sqrt(rho) * x[None, :] + complex_normal(rng, (trials, 4))
        err = ls_chunk_estimate(z, rho) - x[None, :]
        bias = err.mean(axis=0)
        se = 1 / np.sqrt(rho * trials)
        assert np.abs(bias).max() < 3 * se * 2

    def test_nonpositive_rho_rejected(self):
        with pytest.raises(ValueError):
            ls_chunk_estimate(np.ones(2), 0.0)


class TestEstimateFrame:
    def test_matches_per_chunk_ops(self, rng):
        # whole-frame fast path == chunk-by-chunk matrix estimator
        D, M = 10, 4
        mu = complex_normal(rng, (D,))
        var = rng.uniform(0.2, 3.0, D)
        x = mu + np.sqrt(var) * complex_normal(rng, (D,))
        rho = 5.0
        Z = np.sqrt(rho) * chunk(x, M) + complex_normal(rng, (M, 3))
        for kind in ("ls", "lmmse"):
            got = estimate_frame(Z, mu, var, rho, kind)
            mi = Z.shape[1]
            mu_pad = np.pad(mu, (0, mi * M - D))
            var_pad = np.pad(var, (0, mi * M - D))
            ref = []
            for m in range(mi):
                sl = slice(m * M, (m + 1) * M)
                if kind == "ls":
                    ref.append(ls_chunk_estimate(Z[:, m], rho))
                else:
                    ref.append(
                        lmmse_chunk_estimate(
                            Z[:, m], mu_pad[sl], np.diag(var_pad[sl]), rho
                        )
                    )
            ref = np.concatenate(ref)[:D]
            assert np.allclose(got, ref, atol=1e-12)

    def test_batched_rho(self, rng):
        D, M, B = 6, 3, 5
        mu = complex_normal(rng, (D,))
        var = rng.uniform(0.5, 1.5, D)
        Z = complex_normal(rng, (B, M, 2))
        rho = rng.uniform(1, 10, B)
        got = estimate_frame(Z, mu, var, rho, "lmmse")
        for b in range(B):
            one = estimate_frame(Z[b], mu, var, rho[b], "lmmse")
            assert np.allclose(got[b], one)

    def test_unknown_kind(self, rng):
        with pytest.raises(ValueError):
            estimate_frame(np.zeros((2, 1)), np.zeros(2), np.ones(2), 1.0, "map")


class TestUnpack:
    def test_pack_roundtrip(self, rng):
        K, tau = 5, 3
        A = complex_normal(rng, (7, K))
        T = A.conj().T @ A
        t = complex_normal(rng, (K, tau))
        st = LocalStatistics(T=T, t=t)
        est = unpack(pack(st, 1).x, pack(st, 2).x, K, tau)
        assert np.allclose(est.T_hat, T, atol=1e-12)
        assert np.allclose(est.t_hat, t)

    def test_two_user_layout(self):
        x1 = np.array([1.0, 2 + 1j, 3.0])
        T = unpack_gramian(x1, 2)
        assert np.allclose(T, [[1.0, 2 + 1j], [2 - 1j, 3.0]])

    def test_noisy_diagonal_realified(self):
        x1 = np.array([1.0 + 0.3j, 2 + 1j, 3.0 - 0.2j])
        T = unpack_gramian(x1, 2)
        assert T[0, 0] == 1.0 and T[1, 1] == 3.0
        assert np.abs(T - T.conj().T).max() < 1e-15

    def test_length_check(self):
        with pytest.raises(ValueError):
            unpack(np.zeros(4), np.zeros(6), K=2, tau_u=3)

    def test_kind_recorded(self):
        est = unpack(np.zeros(3), np.zeros(6), K=2, tau_u=3, kind="lmmse")
        assert isinstance(est, EstimatedStatistics)
        assert est.estimator_kind == "lmmse"


class TestNmse:
    def test_perfect_estimate_floor(self):
        x = np.ones((10, 3))
        assert nmse_db(x, x) == -300.0

    def test_zero_estimate(self):
        x = np.ones((10, 3), dtype=complex)
        assert nmse_db(x, np.zeros_like(x)) == pytest.approx(0.0)

    def test_half_estimate(self):
        x = np.ones(8, dtype=complex)
        assert nmse_db(x, x / 2) == pytest.approx(-6.0205999, abs=1e-4)

    def test_zero_reference_rejected(self):
        with pytest.raises(ZeroDivisionError):
            nmse_db(np.zeros(3), np.ones(3))

    def test_accumulator_matches_oneshot(self, rng):
        x = complex_normal(rng, (50, 6))
        xh = x + 0.1 * complex_normal(rng, (50, 6))
        acc = NmseAccumulator()
        acc.update(x[:20], xh[:20])
        acc.update(x[20:], xh[20:])
        assert acc.db == pytest.approx(nmse_db(x, xh))
        assert acc.n == 50
        assert np.isfinite(acc.stderr_db)


class TestEstimatorOrdering:
    def test_lmmse_not_worse_than_ls(self, rng):
        # Bayesian estimator beats the prior-free one on average
        D, M = 8, 4
        mu = complex_normal(rng, (D,))
        var = rng.uniform(0.5, 2.0, D)
        trials = 30_000
        rho = 2.0
        x = mu + np.sqrt(var) * complex_normal(rng, (trials, D))
        Z = np.sqrt(rho) * np.swapaxes(x.reshape(trials, 2, M), 1, 2) + complex_normal(
            rng, (trials, M, 2)
        )
        acc = {k: NmseAccumulator() for k in ("ls", "lmmse")}
        for kind in acc:
            xh = estimate_frame(Z, mu, var, rho, kind)
            acc[kind].update(x, xh)
        assert acc["lmmse"].db <= acc["ls"].db + 0.1

    def test_noiseless_fronthaul_identity(self, rng):
        # both estimators recover the sum exactly when the noise is off
        D, M = 10, 4
        mu = complex_normal(rng, (D,))
        var = rng.uniform(0.5, 2.0, D)
        x = mu + np.sqrt(var) * complex_normal(rng, (D,))
        rho = 7.0
        Z = np.sqrt(rho) * chunk(x, M)
        for kind in ("ls", "lmmse"):
            xh = estimate_frame(Z, mu, var, rho, kind, noise_var=0.0)
            assert np.linalg.norm(xh - x) / np.linalg.norm(x) < 1e-10
