import numpy as np
import pytest

from cellfree_ota.geometry import CorrelationSet
from cellfree_ota.moments import (
    build_moment_model,
    mc_moment_oracle,
    pair_position,
    phase1_moments,
    phase2_moments,
    upper_tri_maps,
)


def _uncorrelated(gammas, N):
    """CorrelationSet with R_kl = gamma_kl I_N."""
    g = np.asarray(gammas, dtype=float)
    R = g[:, :, None, None] * np.eye(N, dtype=complex)[None, None]
    return CorrelationSet(R=R, beta=g, beta_avg=1.0)


class TestIndexMaps:
    def test_diag_positions_match_closed_form(self):
        # 1-based positions (K - j/2)(j-1) + j for the diagonal pairs
        K = 8
        _, _, diag_pos = upper_tri_maps(K)
        closed = [int((K - 0.5 * j) * (j - 1) + j) for j in range(1, K + 1)]
        assert list(diag_pos + 1) == closed == [1, 9, 16, 22, 27, 31, 34, 36]

    def test_pair_position_matches_closed_form(self):
        K = 8
        for j in range(1, K + 1):
            for jp in range(j, K + 1):
                n = (K - 0.5 * j) * (j - 1) + jp
                assert pair_position(K, j - 1, jp - 1) == int(n) - 1

    def test_pair_position_bounds(self):
        with pytest.raises(ValueError):
            pair_position(4, 2, 1)


class TestPhase1ClosedForm:
    def test_two_user_identity_case(self):
        # K=2, N=5, R = I_5 at a single AP: mean [5, 0, 5], var diag(5, 5, 5)
        corr = _uncorrelated([[1.0], [1.0]], N=5)
        mu, c1, mu_ap, c1_ap = phase1_moments(corr)
        assert np.allclose(mu, [5.0, 0.0, 5.0])
        assert np.allclose(c1, [5.0, 5.0, 5.0])
        assert mu_ap.shape == (1, 3) and c1_ap.shape == (1, 3)

    def test_sums_over_aps(self):
        corr = _uncorrelated([[1.0, 2.0], [1.0, 0.5]], N=3)
        mu, c1, mu_ap, c1_ap = phase1_moments(corr)
        assert np.allclose(mu, mu_ap.sum(0))
        assert np.allclose(c1, c1_ap.sum(0))
        # diagonal-pair means are N * gamma summed over APs
        assert mu[0] == pytest.approx(3 * (1.0 + 2.0))
        assert mu[2] == pytest.approx(3 * (1.0 + 0.5))
        # cross-entry variance: tr(R_1 R_2) = N g1 g2 per AP
        assert c1[1] == pytest.approx(3 * (1 * 1) + 3 * (2 * 0.5))

    def test_general_hermitian_matrices(self, rng):
        # arbitrary PSD correlation matrices against direct trace formulas
        from cellfree_ota.channel import complex_normal

        K, L, N = 3, 2, 4
        A = complex_normal(rng, (K, L, N, N))
        R = A @ np.swapaxes(A.conj(), -1, -2)
        corr = CorrelationSet(R=R, beta=np.ones((K, L)), beta_avg=1.0)
        mu, c1, _, _ = phase1_moments(corr)
        rows, cols, diag = upper_tri_maps(K)
        for pos, (j, jp) in enumerate(zip(rows, cols)):
            expect_var = sum(
                np.trace(R[j, l] @ R[jp, l]).real for l in range(L)
            )
            assert c1[pos] == pytest.approx(expect_var, rel=1e-10)
            expect_mu = (
                sum(np.trace(R[j, l]).real for l in range(L)) if j == jp else 0.0
            )
            assert mu[pos] == pytest.approx(expect_mu, abs=1e-10)


class TestPhase2ClosedForm:
    def test_single_user_single_ap(self):
        # C2 = rho N (N+1) beta^2 + N beta
        rho, beta, N = 2.0, 0.7, 4
        corr = _uncorrelated([[beta]], N=N)
        c2, c2_ap = phase2_moments(corr, rho)
        expected = rho * N * (N + 1) * beta**2 + N * beta
        assert c2[0] == pytest.approx(expected)
        assert c2_ap[0, 0] == pytest.approx(expected)

    def test_two_ap_cross_term(self):
        rho, N = 2.0, 4
        b1, b2 = 0.5, 1.5
        corr = _uncorrelated([[b1, b2]], N=N)
        c2, c2_ap = phase2_moments(corr, rho)
        per_ap = [rho * N * (N + 1) * b**2 + N * b for b in (b1, b2)]
        cross = 2 * rho * N**2 * b1 * b2
        assert c2[0] == pytest.approx(sum(per_ap) + cross)

    def test_use_independence_by_construction(self, small_corr):
        # covariance carries no channel-use index; same model for every use
        a = build_moment_model(small_corr, 1.5, tau_u=2)
        b = build_moment_model(small_corr, 1.5, tau_u=9)
        assert np.allclose(a.c2, b.c2)
        mu2, v2 = b.phase2_prior()
        assert mu2.shape == (9 * small_corr.K,)
        assert np.allclose(v2[: small_corr.K], v2[-small_corr.K :])


class TestMomentModel:
    def test_prior_shapes(self, small_corr):
        mm = build_moment_model(small_corr, 1.0, tau_u=4)
        mu1, c1 = mm.phase1_prior()
        D1 = small_corr.K * (small_corr.K + 1) // 2
        assert mu1.shape == c1.shape == (D1,)
        assert np.all(c1 > 0)

    def test_second_moment_assembly(self, small_corr):
        mm = build_moment_model(small_corr, 1.0, tau_u=3)
        exx = mm.phase1_second_moment(0)
        mu, var = mm.phase1_moment_vectors(0)
        assert np.allclose(np.diag(exx).real, var + np.abs(mu) ** 2)
        # hermitian PSD
        assert np.abs(exx - exx.conj().T).max() < 1e-12
        assert np.linalg.eigvalsh(exx).min() > -1e-10

    def test_phase2_second_moment_block_diag(self, small_corr):
        mm = build_moment_model(small_corr, 2.0, tau_u=2)
        exx = mm.phase2_second_moment(1)
        K = small_corr.K
        assert np.allclose(np.diag(exx).real, np.tile(mm.c2_ap[1], 2))
        assert np.abs(exx - np.diag(np.diag(exx))).max() == 0

    def test_analytic_variances_nonnegative(self, rng):
        # PSD inputs can never produce negative variances in either phase
        from cellfree_ota.channel import complex_normal
        from cellfree_ota.geometry import CorrelationSet

        for trial in range(10):
            K, L, N = rng.integers(1, 6), rng.integers(1, 5), rng.integers(1, 6)
            A = complex_normal(rng, (K, L, N, N))
            R = A @ np.swapaxes(A.conj(), -1, -2)
            corr = CorrelationSet(R=R, beta=np.ones((K, L)), beta_avg=1.0)
            mm = build_moment_model(corr, rho_ul=float(rng.uniform(0.1, 10)), tau_u=2)
            assert np.all(mm.c1 >= 0)
            assert np.all(mm.c2 >= 0)
            assert np.all(mm.mu1 >= 0)  # traces of PSD matrices

    def test_json_dump_roundtrip(self, small_corr, tmp_path):
        import json

        mm = build_moment_model(small_corr, 2.0, tau_u=2)
        path = tmp_path / "moments.json"
        mm.dump_json(path)
        raw = json.loads(path.read_text())
        assert raw["K"] == small_corr.K
        assert np.allclose(raw["mu1"], mm.mu1)
        assert np.allclose(raw["c2_ap"], mm.c2_ap)


class TestOracleAgreement:
    def test_zero_channels(self):
        corr = _uncorrelated([[0.0], [0.0]], N=3)
        emp = mc_moment_oracle(corr, 1.0, draws=1000, seed=0)
        assert np.all(emp.mean1 == 0)
        assert np.all(emp.cov1 == 0)
        assert np.all(emp.cov2 == 0)

    def test_closed_forms_within_tolerance(self, small_corr):
        rho = 1.8
        mm = build_moment_model(small_corr, rho, tau_u=2)
        emp = mc_moment_oracle(small_corr, rho, draws=200_000, seed=5)
        nz = np.flatnonzero(mm.mu1)
        assert np.abs(emp.mean1[nz].real - mm.mu1[nz]).max() / mm.mu1[nz].min() < 0.02
        rel_c1 = np.abs(np.diag(emp.cov1).real - mm.c1) / mm.c1
        assert rel_c1.max() < 0.02
        for i in range(emp.cov2.shape[0]):
            rel_c2 = np.abs(np.diag(emp.cov2[i]).real - mm.c2) / mm.c2
            assert rel_c2.max() < 0.02

    def test_offdiagonals_consistent_with_zero(self, small_corr):
        emp = mc_moment_oracle(small_corr, 1.8, draws=200_000, seed=5)
        off = ~np.eye(emp.cov1.shape[0], dtype=bool)
        z = np.abs(emp.cov1[off]) / emp.se_cov1[off]
        assert z.max() < 5.0
        offK = ~np.eye(small_corr.K, dtype=bool)
        z2 = np.abs(emp.cov2[0][offK]) / emp.se_cov2[0][offK]
        assert z2.max() < 5.0

    def test_cross_use_uncorrelated(self, small_corr):
        emp = mc_moment_oracle(small_corr, 1.8, draws=100_000, seed=6)
        z = np.abs(emp.cross_t) / emp.se_cov2[0]
        assert z.max() < 5.0

    def test_standard_error_scaling(self, small_corr):
        a = mc_moment_oracle(small_corr, 1.0, draws=20_000, seed=3)
        b = mc_moment_oracle(small_corr, 1.0, draws=80_000, seed=3)
        ratio = np.median(a.se_cov1 / b.se_cov1)
        assert ratio == pytest.approx(2.0, rel=0.15)

    def test_alternate_symbol_prior_matches(self, small_corr):
        # covariance only requires E[s s^H] = I; BPSK symbols give the same c2
        from cellfree_ota.modulation import constellation

        emp = mc_moment_oracle(
            small_corr, 1.8, draws=150_000, seed=9, const=constellation("bpsk")
        )
        mm = build_moment_model(small_corr, 1.8, tau_u=1)
        rel = np.abs(np.diag(emp.cov2[0]).real - mm.c2) / mm.c2
        assert rel.max() < 0.025
