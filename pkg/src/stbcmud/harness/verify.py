"""Property suites over the closed forms and detectors.

Each suite draws its inputs from ``stream(seed, suite_id, ...)`` and reports
the worst observed residual next to its threshold. Default sample counts are
listed in ``SUITES``; pass ``n`` to override.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..analysis import (
    channel_correlation_C,
    chi_square_statistic,
    det_c_closed_form,
    lemma1_residual,
    lemma1_terms,
    lemma2_verify,
    lemma3_residuals,
)
from ..cxmat import alamouti_norm_sq, hermitian
from ..detect import cancel_users, noise_correlation, separate_decode, whitened_ml_decode, ap_cancel_general
from ..fading import RealChannelDecomposition, complex_normal, stream, transmit, NoiseModel
from ..stcodes import alamouti_blocks, alamouti_encode, equivalent_channel, qostbc_encode, qostbc_merge, qostbc_merge_observations, qostbc_split, qpsk

__all__ = ["Check", "VerifyReport", "SUITES", "run_verify"]


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    relation: str = "<"

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} = {self.value:.4g} ({self.relation} {self.threshold:g})"


@dataclass
class VerifyReport:
    suite: str
    samples: int
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, value, threshold, relation="<"):
        value = float(value)
        ok = {"<": value < threshold, ">": value > threshold, "==": value == threshold, "<=": value <= threshold}[relation]
        self.checks.append(Check(name, value, threshold, bool(ok), relation))

    def lines(self) -> list:
        head = f"{'PASS' if self.passed else 'FAIL'} suite {self.suite} ({self.samples} samples)"
        return [head] + ["  " + c.line() for c in self.checks]


def _rng(seed, suite, *key):
    return stream(seed, sum(ord(ch) << (8 * i) for i, ch in enumerate(suite[:6])), *key)


def _lemma1(rng, n, rep):
    d = RealChannelDecomposition(rng.standard_normal((n, 8)), rng.standard_normal((n, 8)))
    rep.add("max_residual", np.max(lemma1_residual(d)), 1e-10)
    sparse = RealChannelDecomposition(d.a, np.concatenate([d.b[:, :4], np.zeros((n, 4))], axis=1))
    rep.add("max_residual_b5_to_b8_zero", np.max(lemma1_residual(sparse)), 1e-12)


def _lemma2(rng, n, rep):
    worst = dict(eigen=0.0, orth=0.0, diag=0.0, spectrum=0.0)
    min_eig = np.inf
    bad_count = 0
    for _ in range(n):
        M = int(rng.integers(3, 9))
        cert = lemma2_verify(rng.standard_normal(4 * M), M, check=False)
        lam = np.sort(cert.lambda_stars)
        if lam.size != M - 1 or np.any(lam == 0) or np.any(np.diff(lam) <= 1e-12):
            bad_count += 1
        worst["eigen"] = max(worst["eigen"], cert.eigen_residual)
        worst["orth"] = max(worst["orth"], cert.orth_residual)
        worst["diag"] = max(worst["diag"], cert.diag_check)
        full = np.linalg.eigvalsh(cert.C)
        worst["spectrum"] = max(worst["spectrum"], float(np.max(np.abs(full - np.sort(np.repeat(lam, 4))))))
        min_eig = min(min_eig, cert.min_eigenvalue)
    rep.add("root_count_failures", bad_count, 0, "==")
    rep.add("max_eigen_residual", worst["eigen"], 1e-8)
    rep.add("max_orthogonality_residual", worst["orth"], 1e-8)
    rep.add("max_diagonalization_residual", worst["diag"], 1e-8)
    rep.add("max_spectrum_mismatch", worst["spectrum"], 1e-8)
    rep.add("min_eigenvalue_of_C", min_eig, 0.0, ">")


def _lemma3(rng, n, rep, k=5):
    bad = 0
    worst_rel = 0.0
    naive_excess = 0
    for _ in range(n):
        betas = rng.uniform(0, 1, k)
        r = lemma3_residuals(betas)
        if r["roots"].size != k or np.any(r["roots"] == 0) or np.any(np.diff(r["roots"]) <= 1e-12):
            bad += 1
        worst_rel = max(worst_rel, float(np.max(r["stable"] / np.maximum(1.0, r["scale"]))))
        naive_excess += int(np.sum(r["naive"] > r["naive_bound"]))
    pair = lemma3_residuals([0.25, 0.75])
    rep.add(f"root_count_failures_k{k}", bad, 0, "==")
    rep.add("max_scaled_residual", worst_rel, 1e-12)
    rep.add("naive_substitution_over_bound", naive_excess, 0, "==")
    rep.add("residual_betas_0.25_0.75", np.max(pair["naive"]), 1e-12)


def _detc(rng, n, rep):
    b = rng.standard_normal((n, 12))
    closed = det_c_closed_form(b, 3)
    numeric = np.linalg.det(channel_correlation_C(b, 3))
    rep.add("max_relative_error", np.max(np.abs(closed - numeric) / np.abs(numeric)), 1e-9)
    eq = np.concatenate([np.array([1.0, 0, 0, 0]), np.array([1.0, 0, 0, 0]), np.array([0, 1.0, 0, 0])])
    rep.add("equal_energy_case_error", abs(det_c_closed_form(eq, 3) - 0.75**4), 1e-15)


def _chisq(rng, n, rep):
    h = complex_normal(rng, (n, 2, 2))
    g = complex_normal(rng, (n, 2, 2))
    x = chi_square_statistic(equivalent_channel(h), equivalent_channel(g))
    rep.add("ks_distance_gamma2", stats.kstest(x, stats.gamma(2).cdf).statistic, 0.01)
    rep.add("min_statistic", np.min(x), 0.0, ">")


def linear_term_maps(b, M: int) -> np.ndarray:
    """Rows mapping the real channel vector ``a`` to the normalized cross terms.

    Returns ``W`` of shape ``(4(M-1), 4M)``; with unit-variance ``a`` the
    correlation of ``W a`` is ``W W^T``.
    """
    b = np.asarray(b, dtype=float)
    base = np.sum(b[:4] ** 2)
    rows = []
    for i in range(1, M):
        sel = np.r_[0:4, 4 * i : 4 * i + 4]
        L = np.zeros((4, 4 * M))
        for j, col in enumerate(sel):
            e = np.zeros(8)
            e[j] = 1.0
            L[:, col] = lemma1_terms(e, b[sel])
        rows.append(L / np.sqrt(base + np.sum(b[4 * i : 4 * i + 4] ** 2)))
    return np.concatenate(rows, axis=0)


def _correlation(rng, n, rep):
    M = 3
    b = rng.standard_normal(4 * M)
    W = linear_term_maps(b, M)
    C = channel_correlation_C(b, M)
    rep.add("exact_coefficient_mismatch", np.max(np.abs(W @ W.T - C)), 1e-12)
    a = rng.standard_normal((n, 4 * M))
    t = a @ W.T
    rep.add("monte_carlo_mismatch", np.max(np.abs(t.T @ t / n - C)), 0.01)
    # first-round noise covariance against mapped noise samples
    nn = min(n, 100_000)
    g = complex_normal(rng, (1, 2, M))
    blocks = alamouti_blocks(g)[0]
    sigma_sq = 0.7
    closed = noise_correlation(blocks, sigma_sq)
    kinv = hermitian(blocks) / alamouti_norm_sq(blocks)[:, None, None]
    noise = complex_normal(rng, (nn, M, 2), sigma_sq)
    mapped = np.einsum("mij,nmj->nmi", kinv, noise)
    out = (mapped[:, 1:, :] - mapped[:, :1, :]).reshape(nn, -1)
    emp = out.T @ np.conj(out) / nn
    rep.add("noise_cov_relative_mismatch", np.max(np.abs(emp - closed)) / np.max(np.abs(closed)), 0.02)
    norms = rng.exponential(size=(min(n, 10_000), 4)) + 1e-3
    Gs = np.zeros((norms.shape[0], 4, 2, 2), dtype=complex)
    Gs[..., 0, 0] = np.sqrt(norms)
    Gs[..., 1, 1] = np.sqrt(norms)
    rep.add("min_noise_pattern_eigenvalue", np.min(np.linalg.eigvalsh(noise_correlation(Gs, 1.0))), 0.0, ">")


def _separability(rng, n, rep):
    Q = qpsk()
    h = complex_normal(rng, (n, 2, 2, 3))
    idx = rng.integers(0, 4, (n, 2, 2))
    noise = NoiseModel.from_db(5.0)
    y = transmit(alamouti_encode(Q.points[idx]), h, noise, rng)
    sys_ = ap_cancel_general(y, h, 0, sigma_sq=noise.per_sample_variance)
    joint = whitened_ml_decode(sys_, Q).indices
    sep = separate_decode(sys_, Q).indices
    rep.add("decision_mismatches", int(np.count_nonzero(np.any(joint != sep, axis=-1))), 0, "==")
    inv = np.linalg.inv(sys_.noise_cov)
    scale = np.max(np.abs(inv), axis=(-2, -1))[:, None, None]
    blocks = inv.reshape(n, 2, 2, 2, 2).transpose(0, 1, 3, 2, 4)
    off = np.max(np.abs(blocks[..., 0, 1]) + np.abs(blocks[..., 1, 0]), axis=(-2, -1))
    diff = np.max(np.abs(blocks[..., 0, 0] - blocks[..., 1, 1]), axis=(-2, -1))
    rep.add("inverse_cov_max_imag", np.max(np.abs(inv.imag) / scale), 1e-12)
    rep.add("inverse_cov_block_nonscalar", np.max((off + diff) / scale[:, 0, 0]), 1e-12)


def _roundtrip(rng, n, rep):
    M = 2
    h = complex_normal(rng, (n, 4, M))
    c = complex_normal(rng, (n, 4))
    r = transmit(qostbc_encode(c, np.pi / 4)[:, None], h[:, None], noiseless=True)
    plus, minus = qostbc_split(r, h)
    back = qostbc_merge_observations(plus.obs, minus.obs)  # (n, M, 4)
    scale = np.max(np.abs(r), axis=(-2, -1))
    rep.add("observation_residual", np.max(np.max(np.abs(back - np.swapaxes(r, -1, -2)), axis=(-2, -1)) / scale), 1e-12)
    hb = qostbc_merge(plus.blocks, minus.blocks)  # (n, M, 4)
    hs = np.max(np.abs(h), axis=(-2, -1))
    rep.add("channel_residual", np.max(np.max(np.abs(hb - np.swapaxes(h, -1, -2)), axis=(-2, -1)) / hs), 1e-12)


SUITES = {
    "lemma1": (_lemma1, 100_000),
    "lemma2": (_lemma2, 10_000),
    "lemma3": (_lemma3, 1_000),
    "detc": (_detc, 1_000),
    "chisq": (_chisq, 100_000),
    "correlation": (_correlation, 1_000_000),
    "separability": (_separability, 10_000),
    "roundtrip": (_roundtrip, 10_000),
}


def run_verify(suite: str, seed: int = 0, n: int | None = None) -> VerifyReport:
    """Run one property suite; failures are report entries, never exceptions."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    fn, default_n = SUITES[suite]
    n = default_n if n is None else int(n)
    rep = VerifyReport(suite, n)
    fn(_rng(seed, suite), n, rep)
    return rep
