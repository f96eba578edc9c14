import itertools

import numpy as np
import pytest

from stbcmud.cxmat import SingularMatrixError, alamouti_inv_matrix, alamouti_norm_sq, hermitian, is_alamouti
from stbcmud.detect import (
    CapExceededError,
    EquivalentSystem,
    NotPositiveDefiniteError,
    ap_cancel_general,
    ap_cancel_pair,
    cancel_users,
    ml_joint_detect,
    noise_correlation,
    qostbc_ap_detect,
    qostbc_ap_system,
    qostbc_decode,
    separate_decode,
    whitened_ml_decode,
)
from stbcmud.fading import NoiseModel, transmit
from stbcmud.stcodes import alamouti_blocks, alamouti_encode, equivalent_channel, qam16, qostbc_encode, qpsk, to_conj_domain

from .conftest import crandn

Q = qpsk()


def alamouti_scene(rng, J, M, batch, snr_db=None):
    h = crandn(rng, batch, J, 2, M)
    idx = rng.integers(0, Q.size, (batch, J, 2))
    x = alamouti_encode(Q.points[idx])
    if snr_db is None:
        return h, idx, transmit(x, h, noiseless=True), 1.0
    noise = NoiseModel.from_db(snr_db)
    return h, idx, transmit(x, h, noise, rng), noise.per_sample_variance


def enumerate_ml(y, h):
    """Brute force in the conjugated domain: min ||r - sum_j H_j c_j||^2 over all tuples."""
    r = to_conj_domain(y).reshape(-1)
    Hs = [equivalent_channel(h[j]) for j in range(h.shape[0])]
    best, arg = np.inf, None
    pairs = list(itertools.product(range(Q.size), repeat=2))
    for combo in itertools.product(pairs, repeat=len(Hs)):
        res = r - sum(H @ Q.points[list(p)] for H, p in zip(Hs, combo))
        m = np.vdot(res, res).real
        if m < best - 1e-12:
            best, arg = m, combo
    return np.array(arg)


class TestJointML:
    def test_noiseless_recovery(self, rng):
        h, idx, y, _ = alamouti_scene(rng, 2, 2, 1000)
        np.testing.assert_array_equal(ml_joint_detect(y, h, Q).indices, idx)

    def test_against_enumeration(self, rng):
        h, idx, y, _ = alamouti_scene(rng, 2, 2, 1000, snr_db=6)
        got = ml_joint_detect(y, h, Q).indices
        for k in range(0, 1000, 10):
            np.testing.assert_array_equal(got[k], enumerate_ml(y[k], h[k]))

    @pytest.mark.parametrize("M", [1, 2, 3])
    def test_single_user_matched_filter(self, rng, M):
        h, idx, y, _ = alamouti_scene(rng, 1, M, 500, snr_db=3)
        got = ml_joint_detect(y, h, Q).indices[:, 0]
        H = equivalent_channel(h[:, 0])
        z = np.einsum("bji,bj->bi", np.conj(H), to_conj_domain(y).reshape(500, -1)) / alamouti_norm_sq(H)[:, None]
        mf = np.argmin(np.abs(z[..., None] - Q.points) ** 2, axis=-1)
        np.testing.assert_array_equal(got, mf)

    def test_ties_lowest_index(self):
        d = ml_joint_detect(np.zeros((2, 2)), np.zeros((2, 2, 2)), Q)
        np.testing.assert_array_equal(d.indices, 0)

    def test_cap(self, rng):
        h = crandn(rng, 2, 2, 2)
        with pytest.raises(CapExceededError):
            ml_joint_detect(np.zeros((2, 2)), h, qam16(), cap=1000)

    def test_qostbc_noiseless(self, rng):
        h = crandn(rng, 20, 2, 4, 2)
        idx = rng.integers(0, 4, (20, 2, 4))
        y = transmit(qostbc_encode(Q.points[idx], Q.rotation), h, noiseless=True)
        np.testing.assert_array_equal(ml_joint_detect(y, h, Q, code="qostbc").indices, idx)


def _pair_inputs(rng, noiseless=True):
    H1, H2, G1, G2 = (alamouti_encode(crandn(rng, 2)) for _ in range(4))
    c, s = Q.points[rng.integers(0, 4, 2)], Q.points[rng.integers(0, 4, 2)]
    r1, r2 = H1 @ c + G1 @ s, H2 @ c + G2 @ s
    return (r1, r2, H1, H2, G1, G2), c, s


class TestCancelPair:
    def test_leakage(self, rng):
        (r1, r2, H1, H2, G1, G2), c, s = _pair_inputs(rng)
        sc, ss = ap_cancel_pair(r1, r2, H1, H2, G1, G2)
        np.testing.assert_allclose(sc.observations, sc.channel @ c, atol=1e-12)
        np.testing.assert_allclose(ss.observations, ss.channel @ s, atol=1e-12)
        # the interferer is mapped to zero by the applied transform
        Gst = np.vstack([G1, G2])
        assert np.max(np.abs(sc.meta["transform"] @ Gst)) < 1e-12

    def test_matches_normalized_formula(self, rng):
        (r1, r2, H1, H2, G1, G2), _, _ = _pair_inputs(rng)
        sc, _ = ap_cancel_pair(r1, r2, H1, H2, G1, G2)
        ref = hermitian(G2) @ H2 / alamouti_norm_sq(G2) - hermitian(G1) @ H1 / alamouti_norm_sq(G1)
        np.testing.assert_allclose(sc.channel, ref, atol=1e-13)

    def test_block_form_decisions_match(self, rng):
        for _ in range(200):
            (r1, r2, H1, H2, G1, G2), c, s = _pair_inputs(rng)
            r1 = r1 + 0.5 * crandn(rng, 2)
            r2 = r2 + 0.5 * crandn(rng, 2)
            norm = ap_cancel_pair(r1, r2, H1, H2, G1, G2, sigma_sq=0.25)
            blk = ap_cancel_pair(r1, r2, H1, H2, G1, G2, sigma_sq=0.25, form="block")
            for a, b in zip(norm, blk):
                np.testing.assert_array_equal(whitened_ml_decode(a, Q).indices, whitened_ml_decode(b, Q).indices)
            # block form rows match [[I, -G1 G2^-1]] applied to (r1, r2)
            ref = r1 - G1 @ np.linalg.inv(G2) @ r2
            np.testing.assert_allclose(blk[0].observations, ref, atol=1e-12)

    def test_perfectly_correlated_is_degenerate(self, rng):
        H, G = alamouti_encode(crandn(rng, 2)), alamouti_encode(crandn(rng, 2))
        sc, _ = ap_cancel_pair(np.zeros(2), np.zeros(2), H, H, G, G)
        assert np.max(np.abs(sc.channel)) < 1e-14
        assert bool(sc.meta["degenerate"])

    def test_singular_block(self, rng):
        H = alamouti_encode(crandn(rng, 2))
        with pytest.raises(SingularMatrixError):
            ap_cancel_pair(np.zeros(2), np.zeros(2), H, H, np.zeros((2, 2)), H)


class TestCancelGeneral:
    def test_reduces_to_pair(self, rng):
        h, idx, y, _ = alamouti_scene(rng, 2, 2, 1, snr_db=5)
        r = to_conj_domain(y[0])
        B = alamouti_blocks(h[0])
        sys_pair, _ = ap_cancel_pair(r[0], r[1], B[0, 0], B[0, 1], B[1, 0], B[1, 1])
        sys_gen = ap_cancel_general(y[0], h[0], 0)
        np.testing.assert_allclose(sys_gen.channel, sys_pair.channel)
        np.testing.assert_allclose(sys_gen.observations, sys_pair.observations)

    def test_three_antennas_two_users(self, rng):
        h, idx, y, _ = alamouti_scene(rng, 2, 3, 1)
        B = alamouti_blocks(h[0])
        sys_ = ap_cancel_general(y[0], h[0], 0)
        Ginv = [hermitian(B[1, m]) / alamouti_norm_sq(B[1, m]) for m in range(3)]
        ref = np.vstack([Ginv[i] @ B[0, i] - Ginv[0] @ B[0, 0] for i in (1, 2)])
        np.testing.assert_allclose(sys_.channel, ref, atol=1e-13)
        np.testing.assert_allclose(sys_.observations, ref @ Q.points[idx[0, 0]], atol=1e-12)

    @pytest.mark.parametrize("J,M", [(3, 3), (3, 4), (4, 5)])
    def test_interference_removed(self, rng, J, M):
        h, idx, y, _ = alamouti_scene(rng, J, M, 50)
        for target in range(J):
            sys_ = ap_cancel_general(y, h, target)
            T = sys_.meta["transform"]
            assert sys_.dim == 2 * (M - J + 1)
            for j in range(J):
                if j == target:
                    continue
                leak = T @ equivalent_channel(h[:, j])
                assert np.max(np.abs(leak)) < 1e-10 * max(1.0, np.max(np.abs(T)))
            np.testing.assert_allclose(whitened_ml_decode(sys_, Q).indices, idx[:, target])

    def test_custom_order(self, rng):
        h, idx, y, _ = alamouti_scene(rng, 3, 3, 20)
        sys_ = ap_cancel_general(y, h, 0, order=[1, 2])
        assert sys_.meta["order"] == [1, 2]
        np.testing.assert_array_equal(separate_decode(sys_, Q).indices, idx[:, 0])

    def test_too_few_antennas(self, rng):
        with pytest.raises(ValueError):
            ap_cancel_general(np.zeros((2, 2)), crandn(rng, 3, 2, 2), 0)

    def test_bad_order(self, rng):
        with pytest.raises(ValueError):
            ap_cancel_general(np.zeros((2, 3)), crandn(rng, 3, 2, 3), 0, order=[1])


class TestNoiseCorrelation:
    def test_equal_norms(self):
        G = np.stack([np.eye(2)] * 3)
        np.testing.assert_allclose(noise_correlation(G, 1.0), np.kron([[2, 1], [1, 2]], np.eye(2)))

    def test_single_round(self, rng):
        G = np.stack([alamouti_encode(crandn(rng, 2)) for _ in range(2)])
        n = alamouti_norm_sq(G)
        np.testing.assert_allclose(noise_correlation(G, 0.3), 0.3 * (1 / n[0] + 1 / n[1]) * np.eye(2))

    @pytest.mark.parametrize("M", [2, 3, 5])
    def test_matches_propagated_cov(self, rng, M):
        h = crandn(rng, 2, 2, M)
        sys_ = ap_cancel_general(np.zeros((2, M)), h, 0, sigma_sq=0.7)
        np.testing.assert_allclose(sys_.noise_cov, noise_correlation(alamouti_blocks(h[1]), 0.7), atol=1e-12)

    def test_empirical(self, rng):
        G = alamouti_blocks(crandn(rng, 2, 3))
        closed = noise_correlation(G, 1.0)
        n = crandn(rng, 100_000, 3, 2)
        kinv = alamouti_inv_matrix(G)
        z = np.einsum("mij,bmj->bmi", kinv, n)
        out = (z[:, 1:] - z[:, :1]).reshape(-1, 4)
        emp = out.T @ np.conj(out) / len(out)
        assert np.max(np.abs(emp - closed)) < 0.02 * np.max(np.abs(closed))

    def test_pattern_positive_definite(self, rng):
        norms = rng.exponential(size=(10_000, 4))
        G = np.zeros((10_000, 4, 2, 2), dtype=complex)
        G[..., 0, 0] = G[..., 1, 1] = np.sqrt(norms)
        assert np.min(np.linalg.eigvalsh(noise_correlation(G))) > 0

    def test_stated_eigenvalue_list_not_general(self):
        """The pattern's eigenvalues are not the per-antenna sums for unequal norms."""
        G = np.stack([np.sqrt(v) * np.eye(2) for v in (1.0, 2.0, 3.0, 5.0)])
        w = np.linalg.eigvalsh(noise_correlation(G))
        naive = np.array([1 / 2 + 1, 1 / 3 + 1, 1 / 5 + 1])
        assert not np.allclose(np.unique(np.round(w, 10)), np.sort(naive))

    def test_zero_block(self):
        with pytest.raises(SingularMatrixError):
            noise_correlation(np.zeros((2, 2, 2)))


class TestWhitenedML:
    def test_white_noise_equals_plain(self, rng):
        h, idx, y, s2 = alamouti_scene(rng, 1, 3, 500, snr_db=0)
        H = equivalent_channel(h[:, 0])
        r = to_conj_domain(y).reshape(500, -1)
        sys_ = EquivalentSystem(H, r, s2 * np.broadcast_to(np.eye(6), (500, 6, 6)))
        np.testing.assert_array_equal(whitened_ml_decode(sys_, Q).indices, whitened_ml_decode(sys_, Q, whiten=False).indices)

    def test_separability(self, rng):
        h, idx, y, s2 = alamouti_scene(rng, 2, 3, 10_000, snr_db=4)
        sys_ = ap_cancel_general(y, h, 0, sigma_sq=s2)
        np.testing.assert_array_equal(whitened_ml_decode(sys_, Q).indices, separate_decode(sys_, Q).indices)

    def test_gram_is_scalar(self, rng):
        h, _, y, s2 = alamouti_scene(rng, 3, 5, 100, snr_db=4)
        sys_ = ap_cancel_general(y, h, 0, sigma_sq=s2)
        g = hermitian(sys_.channel) @ np.linalg.solve(sys_.noise_cov, sys_.channel)
        np.testing.assert_allclose(g[:, 0, 1], 0, atol=1e-10 * np.max(np.abs(g)))
        np.testing.assert_allclose(g[:, 0, 0], g[:, 1, 1], rtol=1e-10)

    def test_inverse_cov_block_form(self, rng):
        h, _, y, s2 = alamouti_scene(rng, 2, 3, 1, snr_db=4)
        inv = np.linalg.inv(ap_cancel_general(y, h, 0, sigma_sq=s2).noise_cov[0])
        assert np.max(np.abs(inv.imag)) < 1e-12 * np.max(np.abs(inv))
        for i, j in itertools.product(range(2), repeat=2):
            blk = inv[2 * i : 2 * i + 2, 2 * j : 2 * j + 2].real
            assert blk[0, 0] == pytest.approx(blk[1, 1], rel=1e-12)
            assert abs(blk[0, 1]) < 1e-12 and abs(blk[1, 0]) < 1e-12

    def test_not_positive_definite(self):
        sys_ = EquivalentSystem(np.eye(2), np.zeros(2), np.zeros((2, 2)))
        with pytest.raises(NotPositiveDefiniteError):
            whitened_ml_decode(sys_, Q)


def qostbc_scene(rng, J, M, batch, idx=None):
    h = crandn(rng, batch, J, 4, M)
    if idx is None:
        idx = rng.integers(0, 4, (batch, J, 4))
    y = transmit(qostbc_encode(Q.points[idx], Q.rotation), h, noiseless=True)
    return h, idx, y


class TestQostbcPipeline:
    def test_all_messages_two_users(self, rng):
        msgs = np.array(list(itertools.product(range(4), repeat=4)))
        idx = np.stack([msgs, msgs[rng.permutation(256)]], axis=1)
        h, idx, y = qostbc_scene(rng, 2, 2, 256, idx)
        np.testing.assert_array_equal(qostbc_ap_detect(y, h, 0, Q).indices, idx[:, 0])
        np.testing.assert_array_equal(qostbc_ap_detect(y, h, 1, Q).indices, idx[:, 1])

    def test_three_users(self, rng):
        h, idx, y = qostbc_scene(rng, 3, 3, 200)
        np.testing.assert_array_equal(qostbc_ap_detect(y, h, 0, Q).indices, idx[:, 0])

    def test_merged_layout(self, rng):
        h, idx, y = qostbc_scene(rng, 2, 3, 5)
        sys_ = qostbc_ap_system(y, h, 0)
        a_p = sys_.plus.channel.reshape(5, 2, 2, 2)[..., 0, :]
        a_m = sys_.minus.channel.reshape(5, 2, 2, 2)[..., 0, :]
        ref = np.concatenate([(a_p + a_m) / 2, (a_p - a_m) / 2], axis=-1)
        np.testing.assert_allclose(sys_.channel, ref, atol=1e-14)
        assert all(is_alamouti(b) for b in sys_.plus.channel.reshape(-1, 2, 2))

    def test_pairwise_equals_full(self, rng):
        h = crandn(rng, 300, 2, 4, 2)
        idx = rng.integers(0, 4, (300, 2, 4))
        noise = NoiseModel.from_db(8)
        y = transmit(qostbc_encode(Q.points[idx], Q.rotation), h, noise, rng)
        sys_ = qostbc_ap_system(y, h, 0, sigma_sq=noise.per_sample_variance)
        np.testing.assert_array_equal(qostbc_decode(sys_, Q).indices, qostbc_decode(sys_, Q, pairwise=False).indices)

    def test_requires_four_antennas(self, rng):
        with pytest.raises(ValueError):
            qostbc_ap_system(np.zeros((2, 2)), crandn(rng, 2, 2, 2))

    def test_too_few_antennas(self, rng):
        with pytest.raises(ValueError):
            qostbc_ap_system(np.zeros((4, 1)), crandn(rng, 2, 4, 1))


def test_every_detector_recovers_noiseless(rng):
    for J, M in [(1, 1), (2, 2), (2, 3), (3, 3)]:
        h, idx, y, _ = alamouti_scene(rng, J, M, 1000)
        sys_ = ap_cancel_general(y, h, 0)
        np.testing.assert_array_equal(whitened_ml_decode(sys_, Q).indices, idx[:, 0])
        np.testing.assert_array_equal(separate_decode(sys_, Q, whiten=False).indices, idx[:, 0])
        if J <= 2:
            np.testing.assert_array_equal(ml_joint_detect(y, h, Q).indices, idx)
