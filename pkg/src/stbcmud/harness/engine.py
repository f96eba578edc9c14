"""Seeded, chunked, thread-parallel Monte Carlo engine.

Work for SNR point ``p`` is split into chunks of ``chunk_size`` codeword
blocks; chunk ``c`` draws everything (messages, channels, noise) from the
stream keyed ``(seed, p, c)``. Chunks may run on any number of threads,
but the stop rule is evaluated on the chunk sequence in index order, so the
counts of a point depend only on ``(config, seed)``.
"""

from __future__ import annotations

import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..analysis import CurvePoint, SimResult, outage_fit
from ..cxmat import STRUCT_TOL, alamouti_norm_sq, hermitian
from ..detect import (
    ap_cancel_general,
    cancel_users,
    ml_joint_detect,
    qostbc_ap_system,
    qostbc_decode,
    separate_decode,
)
from ..fading import NoiseModel, complex_normal, stream, transmit
from ..stcodes import alamouti_blocks, alamouti_encode, get_constellation, qostbc_encode
from .config import ConfigError, SimConfig, resolve_threads

__all__ = ["RunRecord", "run_ber", "run_outage", "ber_chunk", "outage_chunk"]

OUTAGE_STREAM = 1 << 20  # point key of outage streams, disjoint from SNR point indices


@dataclass
class RunRecord:
    """Everything needed to reproduce and report one run."""

    config: dict
    result: SimResult
    wall_time: float
    version: str = __version__
    kind: str = "ber"
    slope: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "result": self.result.to_dict(),
            "wall_time": self.wall_time,
            "version": self.version,
            "kind": self.kind,
            "slope": self.slope,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            config=d["config"],
            result=SimResult.from_dict(d["result"]),
            wall_time=float(d["wall_time"]),
            version=d.get("version", __version__),
            kind=d.get("kind", "ber"),
            slope=d.get("slope"),
            extra=d.get("extra", {}),
        )

    def counts(self) -> list:
        return [(p.trials, p.errors) for p in self.result.points]


# ---------------------------------------------------------------------------
# one chunk of work
# ---------------------------------------------------------------------------


def _branch_norms(h: np.ndarray) -> np.ndarray:
    """Smallest Alamouti block norm per trial over users and antennas (and branches for N=4)."""
    if h.shape[-2] == 2:
        n = np.sum(np.abs(h) ** 2, axis=-2)
    else:
        plus = np.sum(np.abs(h[..., :2, :] + h[..., 2:, :]) ** 2, axis=-2)
        minus = np.sum(np.abs(h[..., :2, :] - h[..., 2:, :]) ** 2, axis=-2)
        n = np.minimum(plus, minus)
    return n.reshape(n.shape[0], -1).min(axis=-1)


def _draw_channels(rng, n, J, N, M) -> np.ndarray:
    h = complex_normal(rng, (n, J, N, M))
    bad = _branch_norms(h) <= STRUCT_TOL
    while np.any(bad):  # singular blocks: probability zero, redraw from the same stream
        h[bad] = complex_normal(rng, (int(bad.sum()), J, N, M))
        bad = _branch_norms(h) <= STRUCT_TOL
    return h


def _decide(cfg: SimConfig, constellation, y, h, sigma_sq):
    """Detected target-user indices ``(n, K)`` and a validity mask ``(n,)``."""
    n = y.shape[0]
    valid = np.ones(n, dtype=bool)
    if cfg.detector == "ml":
        code = "alamouti" if cfg.tx_antennas == 2 else "qostbc"
        return ml_joint_detect(y, h, constellation, code=code).indices[:, cfg.target_user], valid
    whiten = cfg.detector == "ap_whitened_ml"
    if cfg.tx_antennas == 2:
        sys_ = ap_cancel_general(y, h, cfg.target_user, sigma_sq=sigma_sq)
        valid &= ~sys_.meta["degenerate"]
        # H^H C^-1 H is a multiple of I for every cancelled Alamouti system, so the
        # joint whitened search and the per-symbol search return the same pair
        return separate_decode(sys_, constellation, whiten=whiten).indices, valid
    sys_ = qostbc_ap_system(y, h, cfg.target_user, sigma_sq=sigma_sq)
    valid &= ~(sys_.plus.meta["degenerate"] | sys_.minus.meta["degenerate"])
    return qostbc_decode(sys_, constellation, whiten=whiten).indices, valid


def ber_chunk(cfg: SimConfig, point: int, chunk: int, snr_db: float):
    """Simulate one chunk; returns ``(trials, errors)`` for the target user.

    Trials whose cancelled channel is numerically zero are dropped (a
    rejection step equivalent to redrawing them).
    """
    rng = stream(cfg.seed, point, chunk)
    Q = get_constellation(cfg.constellation, cfg.rotation)
    J, N, M, n = cfg.users, cfg.tx_antennas, cfg.rx_antennas, cfg.chunk_size
    K = 2 if N == 2 else 4
    idx = rng.integers(0, Q.size, size=(n, J, K))
    h = _draw_channels(rng, n, J, N, M)
    sym = Q.points[idx]
    x = alamouti_encode(sym) if N == 2 else qostbc_encode(sym, Q.rotation)
    if cfg.noiseless:
        y = transmit(x, h, noiseless=True)
        sigma_sq = 1.0
    else:
        noise = NoiseModel.from_db(snr_db)
        y = transmit(x, h, noise, rng)
        sigma_sq = noise.per_sample_variance
    est, valid = _decide(cfg, Q, y, h, sigma_sq)
    truth = idx[:, cfg.target_user]
    est, truth = est[valid], truth[valid]
    if cfg.error_metric == "ber":
        wrong = int(np.count_nonzero(Q.bits(est) != Q.bits(truth)))
        return truth.size * Q.bits_per_symbol, wrong
    return truth.size, int(np.count_nonzero(est != truth))


def _run_chunks(pool, fn, stop, width: int):
    """Evaluate ``fn(0), fn(1), ...`` speculatively ``width`` ahead, consuming in index order.

    ``stop(result)`` is called on each result in order; returns the list of
    consumed results up to and including the first one for which it is true.
    """
    pending = {}
    out = []
    nxt = 0
    while True:
        while len(pending) < width:
            pending[nxt] = pool.submit(fn, nxt)
            nxt += 1
        res = pending.pop(len(out)).result()
        out.append(res)
        if stop(res):
            for fut in pending.values():
                fut.cancel()
            for fut in pending.values():
                if not fut.cancelled():
                    fut.result()
            return out


def _progress(enabled: bool, msg: str):
    if enabled:
        print(msg, file=sys.stderr, flush=True)


def run_ber(cfg: SimConfig, threads: int | None = None, progress: bool = False) -> RunRecord:
    """Error-rate curve over ``cfg.snr_grid_db``.

    Each point stops at the first chunk where errors reach ``min_errors`` or
    trials reach ``max_trials``; in the latter case the point is flagged
    ``low_confidence`` if it has fewer than ``min_errors`` errors.
    """
    cfg.validate()
    nthreads = resolve_threads(threads if threads is not None else cfg.threads)
    t0 = time.perf_counter()
    points = []
    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        for p, snr_db in enumerate(cfg.snr_grid_db):
            totals = [0, 0]

            def stop(res):
                totals[0] += res[0]
                totals[1] += res[1]
                return totals[1] >= cfg.min_errors or totals[0] >= cfg.max_trials

            _run_chunks(pool, lambda c, p=p, s=snr_db: ber_chunk(cfg, p, c, s), stop, width=max(1, nthreads))
            if totals[0] == 0:
                raise RuntimeError(f"no valid trials at {snr_db} dB")
            low = totals[1] < cfg.min_errors
            points.append(CurvePoint(float(snr_db), totals[0], totals[1], low))
            _progress(progress, f"[{cfg.label or cfg.detector}] {snr_db:g} dB: {totals[1]}/{totals[0]}" + (" (low confidence)" if low else ""))
    result = SimResult(points, cfg.label or f"{cfg.detector} J={cfg.users} N={cfg.tx_antennas} M={cfg.rx_antennas}", cfg.seed)
    return RunRecord(cfg.to_dict(), result, time.perf_counter() - t0, kind="ber")


# ---------------------------------------------------------------------------
# outage
# ---------------------------------------------------------------------------


def post_cancellation_snr(h: np.ndarray, target: int = 0, whiten: bool = True) -> np.ndarray:
    """Instantaneous post-cancellation SNR at unit noise variance.

    ``h`` is ``(n, J, 2, M)``. The cancelled system has ``H^H C^{-1} H =
    kappa I`` (whitened combiner) or, for the plain matched filter,
    ``||H||^4 / (H^H C H)``; for ``M = J`` both coincide and for ``J = 2`` they
    equal ``||H||^2 (1 - ||Lambda||^2)``.
    """
    n, J, _, M = h.shape
    obs = np.zeros((n, M, 2), dtype=np.complex128)
    sys_ = cancel_users(obs, alamouti_blocks(h), target, sigma_sq=1.0)
    H, C = sys_.channel, sys_.noise_cov
    if whiten:
        return np.real(hermitian(H) @ np.linalg.solve(C, H))[..., 0, 0]
    hh = alamouti_norm_sq(H)
    return hh**2 / np.real(hermitian(H) @ C @ H)[..., 0, 0]


def outage_chunk(cfg: SimConfig, chunk: int, size: int) -> np.ndarray:
    """Counts ``#{snr < eps}`` for every ``eps`` over ``size`` fresh channel draws."""
    rng = stream(cfg.seed, OUTAGE_STREAM, chunk)
    h = _draw_channels(rng, size, cfg.users, 2, cfg.rx_antennas)
    snr = post_cancellation_snr(h, cfg.target_user, whiten=cfg.detector != "ap")
    return np.searchsorted(np.sort(snr), np.asarray(cfg.eps_grid), side="left").astype(np.int64)


def run_outage(cfg: SimConfig, threads: int | None = None, progress: bool = False, min_count: int = 100) -> RunRecord:
    """Empirical outage CDF of the post-cancellation SNR and its log-log slope."""
    cfg.validate()
    if cfg.detector not in ("ap", "ap_whitened_ml"):
        raise ConfigError("detector", "outage needs an array-processing detector (effective SNR defined)")
    if cfg.tx_antennas != 2:
        raise ConfigError("tx_antennas", "outage estimation is defined for the 2-antenna Alamouti system")
    if len(cfg.eps_grid) < 3:
        raise ConfigError("eps_grid", "need at least 3 thresholds")
    nthreads = resolve_threads(threads if threads is not None else cfg.threads)
    t0 = time.perf_counter()
    size = max(cfg.chunk_size, 1 << 16)
    nchunks = -(-cfg.outage_samples // size)
    sizes = [min(size, cfg.outage_samples - c * size) for c in range(nchunks)]
    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        parts = list(pool.map(lambda c: outage_chunk(cfg, c, sizes[c]), range(nchunks)))
    counts = np.sum(parts, axis=0)
    label = cfg.label or f"outage J={cfg.users} M={cfg.rx_antennas}"
    slope, curve = outage_fit(cfg.eps_grid, counts, cfg.outage_samples, min_count=min_count, label=label, seed=cfg.seed)
    _progress(progress, f"[{label}] slope {slope:.3f} from {cfg.outage_samples} samples")
    return RunRecord(cfg.to_dict(), curve, time.perf_counter() - t0, kind="outage", slope=slope)
