"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

The Monte Carlo criteria are slow by design (several minutes each on one
core). Lines are printed as each criterion finishes and repeated in the
terminal summary.
"""

import time

import numpy as np
import pytest
from scipy import stats

from stbcmud.analysis import ber_diversity_estimate
from stbcmud.detect import qostbc_ap_detect
from stbcmud.fading import complex_normal, stream, transmit
from stbcmud.harness import SimConfig, run_ber, run_outage, run_verify
from stbcmud.stcodes import qostbc_encode, qpsk

RESULTS: list = []


def report(num, ok, detail, started):
    line = f"{'PASS' if ok else 'FAIL'} criterion {num:>2}: {detail} [{time.perf_counter() - started:.1f} s]"
    RESULTS.append(line)
    print("\n" + line)
    assert ok, line


def ci95(point):
    half = 1.96 * np.sqrt(point.errors) / point.trials
    return point.y - half, point.y + half


# Monte Carlo configurations, shared with the determinism criterion
OUTAGE = dict(users=2, tx_antennas=2, rx_antennas=2, detector="ap", eps_grid=[6e-3, 1e-2, 2e-2, 5e-2, 1e-1], outage_samples=10_000_000, seed=2024)
AP_M2 = dict(users=2, rx_antennas=2, detector="ap", snr_grid_db=[15.0, 20.0, 25.0, 30.0], min_errors=100, max_trials=200_000_000, chunk_size=65536, seed=11)
AP_M3 = dict(users=2, rx_antennas=3, detector="ap_whitened_ml", snr_grid_db=[15.0, 17.0, 19.0], min_errors=100, max_trials=300_000_000, chunk_size=65536, seed=12)
ML = dict(users=2, rx_antennas=2, detector="ml", snr_grid_db=[11.0, 13.0, 15.0], min_errors=400, max_trials=50_000_000, chunk_size=16384, seed=13)
AP_AT_ML = dict(ML, detector="ap", chunk_size=65536)
QO = dict(users=2, tx_antennas=4, rx_antennas=2, detector="ap_whitened_ml", snr_grid_db=[14.0, 17.0, 20.0], min_errors=100, max_trials=300_000_000, chunk_size=65536, seed=14)


def test_criterion_01_lemma1():
    t0 = time.perf_counter()
    rep = run_verify("lemma1", seed=1, n=100_000)
    worst = rep.checks[0].value
    elapsed = time.perf_counter() - t0
    report(1, rep.passed and worst < 1e-10 and elapsed < 10, f"Lemma 1 max relative residual {worst:.2e} over 1e5 draws (< 1e-10)", t0)


def test_criterion_02_chi_square():
    t0 = time.perf_counter()
    rep = run_verify("chisq", seed=2, n=100_000)
    ks = rep.checks[0].value
    report(2, ks < 0.01 and time.perf_counter() - t0 < 30, f"KS distance to Gamma(2,1) {ks:.4f} over 1e5 samples (< 0.01)", t0)


def test_criterion_03_outage_slope():
    t0 = time.perf_counter()
    rec = run_outage(SimConfig(**OUTAGE))
    counts = [p.errors for p in rec.result.points]
    ok = abs(rec.slope - 2.0) <= 0.1 and time.perf_counter() - t0 < 120
    report(3, ok, f"AP outage slope {rec.slope:.3f} (2 +- 0.1), counts {counts} of 1e7", t0)


def test_criterion_04_ap_diversity():
    t0 = time.perf_counter()
    m2 = run_ber(SimConfig(**AP_M2)).result
    m3 = run_ber(SimConfig(**AP_M3)).result
    d2 = ber_diversity_estimate(m2, (15, 30))
    d3 = ber_diversity_estimate(m3, (15, 30))
    ok = abs(d2 - 2) <= 0.5 and abs(d3 - 4) <= 1.0 and time.perf_counter() - t0 <= 1800
    report(4, ok, f"AP slope M=2 {d2:.3f} (2 +- 0.5), M=3 {d3:.3f} (4 +- 1)", t0)


def test_criterion_05_ml_diversity():
    t0 = time.perf_counter()
    ml = run_ber(SimConfig(**ML)).result
    ap = run_ber(SimConfig(**AP_AT_ML)).result
    d = ber_diversity_estimate(ml, (5, 15), min_errors=400)
    below = [ci95(m)[1] < ci95(a)[0] for m, a in zip(ml.points, ap.points)]
    ok = abs(d - 4) <= 1.0 and all(below) and time.perf_counter() - t0 <= 1800
    pairs = ", ".join(f"{m.x:g} dB {m.y:.2e}<{a.y:.2e}" for m, a in zip(ml.points, ap.points))
    report(5, ok, f"ML slope {d:.3f} (4 +- 1); ML below AP with disjoint 95% intervals: {pairs}", t0)


def test_criterion_06_qostbc():
    t0 = time.perf_counter()
    rng = stream(6)
    Q = qpsk()
    n = 1000
    idx = rng.integers(0, 4, (n, 2, 4))
    h = complex_normal(rng, (n, 2, 4, 2))
    y = transmit(qostbc_encode(Q.points[idx], Q.rotation), h, noiseless=True)
    failures = sum(int(np.any(qostbc_ap_detect(y, h, u, Q).indices != idx[:, u], axis=-1).sum()) for u in range(2))
    curve = run_ber(SimConfig(**QO)).result
    d = ber_diversity_estimate(curve, (10, 20))
    report(6, failures == 0 and abs(d - 4) <= 1.0, f"QOSTBC noiseless failures {failures}/1000 per user; slope {d:.3f} (4 +- 1)", t0)


def test_criterion_07_spectral_certificate():
    t0 = time.perf_counter()
    rep = run_verify("lemma2", seed=7, n=10_000)
    vals = {c.name: c.value for c in rep.checks}
    ok = rep.passed and time.perf_counter() - t0 < 60
    detail = (
        f"1e4 draws M in 3..8: root-count failures {vals['root_count_failures']:.0f}, eigen {vals['max_eigen_residual']:.1e}, "
        f"diag {vals['max_diagonalization_residual']:.1e}, min eig {vals['min_eigenvalue_of_C']:.2e}"
    )
    report(7, ok, detail, t0)


def test_criterion_08_det_c():
    t0 = time.perf_counter()
    rep = run_verify("detc", seed=8, n=1000)
    report(8, rep.passed, f"det(C) max relative error {rep.checks[0].value:.1e} over 1e3 draws (< 1e-9)", t0)


def test_criterion_09_separability():
    t0 = time.perf_counter()
    rep = run_verify("separability", seed=9, n=10_000)
    vals = {c.name: c.value for c in rep.checks}
    report(9, rep.passed, f"{vals['decision_mismatches']:.0f}/10000 joint-vs-separate mismatches; inverse covariance imag {vals['inverse_cov_max_imag']:.1e}", t0)


def test_criterion_10_roundtrip():
    t0 = time.perf_counter()
    rep = run_verify("roundtrip", seed=10, n=10_000)
    worst = max(c.value for c in rep.checks)
    report(10, rep.passed, f"split/merge max residual {worst:.1e} over 1e4 instances (< 1e-12)", t0)


def test_criterion_11_determinism():
    # every Monte Carlo acceptance configuration, shortened, at 1, 4 and 8 threads
    t0 = time.perf_counter()
    short = {
        "outage": dict(OUTAGE, outage_samples=1_000_000, eps_grid=[2e-2, 5e-2, 1e-1]),
        "ap_m2": dict(AP_M2, snr_grid_db=[15.0, 20.0], max_trials=500_000),
        "ap_m3": dict(AP_M3, snr_grid_db=[10.0, 15.0], max_trials=500_000),
        "ml": dict(ML, snr_grid_db=[5.0, 11.0], min_errors=100),
        "qostbc": dict(QO, snr_grid_db=[10.0, 14.0], max_trials=500_000),
    }
    mismatched = []
    for name, kw in short.items():
        run = run_outage if name == "outage" else run_ber
        counts = [run(SimConfig(**kw), threads=t).counts() for t in (1, 4, 8)]
        if not counts[0] == counts[1] == counts[2]:
            mismatched.append(name)
    report(11, not mismatched, f"identical counts at 1/4/8 threads for {len(short)} configurations; mismatches: {mismatched or 'none'}", t0)
