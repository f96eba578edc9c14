"""Closed-form quantities, identity checks and diversity-order estimators.

Norm convention: for stacked Alamouti matrices ``||X||^2`` is the squared
spectral norm, i.e. the scalar with ``X^H X = ||X||^2 I`` (half the
Frobenius norm). With i.i.d. CN(0, 1) coefficients this makes the
interference-penalized statistic ``(||H||^2 ||G||^2 - ||H^H G||^2) / ||G||^2``
exactly Gamma(2, 1) distributed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .cxmat import alamouti_norm_sq, hermitian
from .fading import RealChannelDecomposition, compose_real
from .stcodes import equivalent_channel

__all__ = [
    "DegenerateInputError",
    "VerificationError",
    "InsufficientCountsError",
    "EffectiveSnrBreakdown",
    "SpectralCertificate",
    "CurvePoint",
    "SimResult",
    "effective_snr_ap",
    "lemma1_terms",
    "lemma1_lhs",
    "lemma1_rhs",
    "lemma1_residual",
    "chi_square_statistic",
    "structured_block",
    "channel_correlation_C",
    "correlation_betas",
    "det_c_closed_form",
    "lemma3_roots",
    "lemma3_residuals",
    "lemma2_verify",
    "outage_diversity_estimate",
    "outage_fit",
    "ber_diversity_estimate",
    "loglog_slope",
]


class DegenerateInputError(ValueError):
    pass


class VerificationError(AssertionError):
    pass


class InsufficientCountsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# effective SNR and the two-antenna identity
# ---------------------------------------------------------------------------


@dataclass
class EffectiveSnrBreakdown:
    snr_ap: np.ndarray
    h_norm_sq: np.ndarray
    g_norm_sq: np.ndarray
    lambda_norm_sq: np.ndarray
    sigma_sq: float
    snr_ap_numerator_form: np.ndarray


def effective_snr_ap(H, G, sigma_sq: float = 1.0) -> EffectiveSnrBreakdown:
    """Post-cancellation SNR ``||H||^2 (1 - ||Lambda||^2) / sigma^2``.

    ``H`` and ``G`` are stacked Alamouti channels ``(..., 2M, 2)`` of the
    desired and interfering user; ``Lambda = H^H G / (||H|| ||G||)``.
    """
    H = np.asarray(H, dtype=np.complex128)
    G = np.asarray(G, dtype=np.complex128)
    hn = alamouti_norm_sq(H)
    gn = alamouti_norm_sq(G)
    if np.any(hn <= 0) or np.any(gn <= 0):
        raise DegenerateInputError("both channels must be nonzero")
    cross = alamouti_norm_sq(hermitian(H) @ G)
    lam = cross / (hn * gn)
    snr = hn * (1 - lam) / sigma_sq
    alt = (hn * gn - cross) / (sigma_sq * gn)
    scale = np.maximum(np.abs(snr), np.finfo(float).tiny)
    if np.any(np.abs(snr - alt) > 1e-10 * np.maximum(scale, hn / sigma_sq)):
        raise VerificationError("the two effective-SNR forms disagree")
    return EffectiveSnrBreakdown(snr, hn, gn, lam, sigma_sq, alt)


def lemma1_terms(a, b) -> np.ndarray:
    """The four real terms whose squares sum to ``||H||^2||G||^2 - ||H^H G||^2``.

    ``a`` and ``b`` are ``(..., 8)``: antenna-1 variables followed by the
    variables of the second antenna. Returns ``(..., 4)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a1, a2, a3, a4, a5, a6, a7, a8 = (a[..., k] for k in range(8))
    b1, b2, b3, b4, b5, b6, b7, b8 = (b[..., k] for k in range(8))
    den = b1**2 + b2**2 + b3**2 + b4**2
    if np.any(den == 0):
        raise DegenerateInputError("b1..b4 all zero")
    k = 2 * (a1 * b4 + a3 * b2 + a4 * b1 - a2 * b3) / den
    t1 = a5 * b1 - a6 * b2 - a7 * b3 - a8 * b4 + a1 * b5 + a2 * b6 + a3 * b7 + a4 * b8 - k * (b1 * b8 + b2 * b7 - b3 * b6 + b4 * b5)
    t2 = a6 * b1 + a5 * b2 - a8 * b3 + a7 * b4 + a1 * b6 - a2 * b5 + a3 * b8 - a4 * b7 - k * (-b1 * b7 + b2 * b8 + b3 * b5 + b4 * b6)
    t3 = a7 * b1 + a8 * b2 + a5 * b3 - a6 * b4 + a1 * b7 - a2 * b8 - a3 * b5 + a4 * b6 + k * (-b1 * b6 + b2 * b5 - b3 * b8 - b4 * b7)
    t4 = a8 * b1 - a7 * b2 + a6 * b3 + a5 * b4 + a1 * b8 + a2 * b7 - a3 * b6 - a4 * b5 + k * (b1 * b5 + b2 * b6 + b3 * b7 - b4 * b8)
    return np.stack([t1, t2, t3, t4], axis=-1)


def lemma1_lhs(d: RealChannelDecomposition) -> np.ndarray:
    """``||H||^2 ||G||^2 - ||H^H G||^2`` from the recomposed complex matrices."""
    h, g = compose_real(d)
    H = equivalent_channel(h)
    G = equivalent_channel(g)
    return alamouti_norm_sq(H) * alamouti_norm_sq(G) - alamouti_norm_sq(hermitian(H) @ G)


def lemma1_rhs(d: RealChannelDecomposition) -> np.ndarray:
    return np.sum(lemma1_terms(d.a, d.b) ** 2, axis=-1)


def lemma1_residual(d: RealChannelDecomposition) -> np.ndarray:
    """``|LHS - RHS| / max(1, |LHS|)`` for two-antenna decompositions."""
    if d.a.shape[-1] != 8:
        raise ValueError("the identity is stated for two receive antennas (8 reals per user)")
    if np.any(np.sum(np.asarray(d.b)[..., :4] ** 2, axis=-1) == 0):
        raise DegenerateInputError("b1..b4 all zero")
    lhs = lemma1_lhs(d)
    return np.abs(lhs - lemma1_rhs(d)) / np.maximum(1.0, np.abs(lhs))


def chi_square_statistic(H, G) -> np.ndarray:
    """``(||H||^2 ||G||^2 - ||H^H G||^2) / ||G||^2`` for stacked Alamouti channels."""
    H = np.asarray(H, dtype=np.complex128)
    G = np.asarray(G, dtype=np.complex128)
    gn = alamouti_norm_sq(G)
    if np.any(gn <= 0):
        raise DegenerateInputError("interferer channel is zero")
    return alamouti_norm_sq(H) - alamouti_norm_sq(hermitian(H) @ G) / gn


# ---------------------------------------------------------------------------
# channel correlation matrix and its spectral certificate
# ---------------------------------------------------------------------------


def structured_block(p) -> np.ndarray:
    """The 4x4 pattern ``P(p)`` with ``P P^T = P^T P = |p|^2 I``."""
    p = np.asarray(p, dtype=float)
    p1, p2, p3, p4 = (p[..., k] for k in range(4))
    rows = [[p1, p2, p3, p4], [p2, -p1, p4, -p3], [p3, -p4, -p1, p2], [p4, p3, -p2, -p1]]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def _groups(b_extended, M: int):
    b = np.asarray(b_extended, dtype=float)
    if M < 2 or b.shape[-1] != 4 * M:
        raise ValueError(f"expected 4*M = {4 * M} reals, got {b.shape[-1]}")
    base = np.sum(b[..., :4] ** 2, axis=-1)
    if np.any(base == 0):
        raise DegenerateInputError("b1..b4 all zero")
    groups = [b[..., 4 * i : 4 * i + 4] for i in range(1, M)]
    return base, groups


def correlation_betas(b_extended, M: int) -> np.ndarray:
    """``beta_i = |group_i|^2 / (b1^2+..+b4^2 + |group_i|^2)`` for ``i = 1..M-1``."""
    base, groups = _groups(b_extended, M)
    own = np.stack([np.sum(g**2, axis=-1) for g in groups], axis=-1)
    return own / (base[..., None] + own)


def _normalized_blocks(b_extended, M: int) -> list:
    base, groups = _groups(b_extended, M)
    return [structured_block(g) / np.sqrt(base + np.sum(g**2, axis=-1))[..., None, None] for g in groups]


def channel_correlation_C(b_extended, M: int) -> np.ndarray:
    """Normalized real correlation matrix of the cancelled equivalent channel.

    ``4(M-1)`` square, identity diagonal blocks, off-diagonal blocks
    ``B_i B_j^T``.
    """
    Bs = _normalized_blocks(b_extended, M)
    n = M - 1
    eye = np.broadcast_to(np.eye(4), Bs[0].shape)
    rows = [np.concatenate([eye if i == j else Bs[i] @ np.swapaxes(Bs[j], -1, -2) for j in range(n)], axis=-1) for i in range(n)]
    return np.concatenate(rows, axis=-2)


def det_c_closed_form(b_extended, M: int = 3):
    """``det C = (1 - beta_1 beta_2)^4`` for three receive antennas."""
    if M != 3:
        raise ValueError("the closed form is available for M = 3 only")
    beta = correlation_betas(b_extended, M)
    return (1 - beta[..., 0] * beta[..., 1]) ** 4


def _secular(delta: float, anchor: int, betas: np.ndarray) -> float:
    # f(lambda) with lambda = 1 - beta[anchor] + delta, in cancellation-free form
    return float(np.sum(betas / (delta + (betas - betas[anchor]))))


def _bisect(fun, lo: float, hi: float) -> float:
    """Root of a decreasing ``fun - 1`` on ``(lo, hi)``; endpoints are never evaluated."""
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fun(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    a, b = fun(lo) if np.isfinite(fun(lo)) else np.inf, fun(hi)
    return lo if abs(a - 1) < abs(b - 1) else hi


def _lemma3_anchored(betas):
    betas = np.asarray(betas, dtype=float).reshape(-1)
    if betas.size == 0:
        raise ValueError("need at least one beta")
    if np.any((betas <= 0) | (betas >= 1)):
        raise ValueError("betas must lie in (0, 1)")
    s = np.sort(betas)
    if np.any(np.diff(s) <= 0):
        raise ValueError("betas must be distinct")
    order = np.argsort(betas)[::-1]  # descending beta = ascending pole position 1 - beta
    out = []
    for k in range(betas.size - 1):
        left, right = order[k], order[k + 1]
        gap = betas[left] - betas[right]
        mid = _secular(0.5 * gap, left, betas)
        if mid > 1.0:
            # root in right half: parametrize from the right pole, delta in (-gap/2, 0)
            delta = _bisect(lambda d: _secular(d, right, betas), -0.5 * gap, 0.0)
            out.append((right, delta))
        else:
            delta = _bisect(lambda d: _secular(d, left, betas), 0.0, 0.5 * gap)
            out.append((left, delta))
    last = order[-1]
    cap = float(np.sum(betas)) + betas[last]
    out.append((last, _bisect(lambda d: _secular(d, last, betas), 0.0, cap)))
    return out


def lemma3_roots(betas) -> list:
    """The ``len(betas)`` roots of ``sum_i beta_i / (lambda + beta_i - 1) = 1``.

    One root per interval between consecutive poles ``1 - beta_i`` and one
    beyond the last pole, located by bisection. Returned ascending.
    """
    betas = np.asarray(betas, dtype=float).reshape(-1)
    roots = [1.0 - betas[k] + d for k, d in _lemma3_anchored(betas)]
    return sorted(roots)


def lemma3_residuals(betas) -> dict:
    """Substitution residuals ``|sum_i beta_i/(lambda + beta_i - 1) - 1|`` of the roots.

    ``stable`` evaluates each denominator as ``delta + (beta_i - beta_k)``
    from the root's offset ``delta`` to its nearest pole ``1 - beta_k``.
    ``naive`` substitutes the rounded float ``lambda`` directly; near a pole
    it is limited by conditioning, and ``naive_bound`` is the matching
    first-order bound ``4 eps (|f'(lambda)| + scale) + 1e-12`` (rounding of
    ``lambda`` and of each denominator ``lambda + beta_i - 1``). ``scale``
    is ``sum_i |beta_i / (lambda + beta_i - 1)|``: a root next to a pole has
    terms of size ``1/delta`` whose rounding alone leaves an absolute
    residual of order ``scale * eps``. Entries follow the ascending root
    order of :func:`lemma3_roots`.
    """
    betas = np.asarray(betas, dtype=float).reshape(-1)
    anchored = _lemma3_anchored(betas)
    lam = np.array([1.0 - betas[k] + d for k, d in anchored])
    order = np.argsort(lam)
    stable = np.array([abs(_secular(d, k, betas) - 1.0) for k, d in anchored])
    scale = np.array([float(np.sum(np.abs(betas / (d + (betas - betas[k]))))) for k, d in anchored])
    naive = np.array([abs(float(np.sum(betas / (x + betas - 1))) - 1.0) for x in lam])
    slope = np.array([float(np.sum(betas / (x + betas - 1) ** 2)) for x in lam])
    bound = 4 * np.finfo(float).eps * (slope + scale) + 1e-12
    return {"roots": lam[order], "stable": stable[order], "naive": naive[order], "naive_bound": bound[order], "scale": scale[order]}


@dataclass
class SpectralCertificate:
    """Evidence that the channel correlation matrix is full rank.

    ``coeffs[m, i]`` is ``a_{mi} = 1 / (lambda*_i + beta_m - 1)``; ``U``
    stacks ``u_i = (a_{1i} B_1; ...; a_{(M-1)i} B_{M-1})`` column-blockwise.
    Residuals are absolute for the eigen equation and relative (to
    ``sqrt(S_i S_j)``) for orthogonality and diagonalization.
    """

    betas: np.ndarray
    lambda_stars: np.ndarray
    coeffs: np.ndarray
    s_values: np.ndarray
    eigen_residual: float
    orth_residual: float
    diag_check: float
    min_eigenvalue: float
    C: np.ndarray = field(repr=False)
    U: np.ndarray = field(repr=False)
    tol: float = 1e-8

    @property
    def passed(self) -> bool:
        return (
            self.eigen_residual < self.tol
            and self.orth_residual < self.tol
            and self.diag_check < self.tol
            and self.min_eigenvalue > 0
            and np.all(np.abs(self.lambda_stars) > 0)
            and np.all(np.diff(np.sort(self.lambda_stars)) > 1e-12)
        )


def lemma2_verify(b_extended, M: int, tol: float = 1e-8, check: bool = True) -> SpectralCertificate:
    """Build the eigenvector matrix ``U`` of ``C`` and certify ``U^T C U`` diagonal."""
    if M < 3:
        raise ValueError("the certificate needs M >= 3")
    b = np.asarray(b_extended, dtype=float)
    C = channel_correlation_C(b, M)
    Bs = _normalized_blocks(b, M)
    betas = correlation_betas(b, M)
    anchored = _lemma3_anchored(betas)
    n = M - 1
    lam = np.array([1.0 - betas[k] + d for k, d in anchored])
    coeffs = np.empty((n, n))
    for i, (k, d) in enumerate(anchored):
        coeffs[:, i] = 1.0 / (d + (betas - betas[k]))
    s_values = np.sum(betas[:, None] * coeffs**2, axis=0)
    us = [np.concatenate([coeffs[m, i] * Bs[m] for m in range(n)], axis=0) for i in range(n)]
    U = np.concatenate(us, axis=1)
    eig_res = max(float(np.linalg.norm(C @ u - lam[i] * u)) for i, u in enumerate(us))
    orth = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                orth = max(orth, float(np.max(np.abs(us[i].T @ us[j]))) / np.sqrt(s_values[i] * s_values[j]))
    D = U.T @ C @ U
    target = np.repeat(s_values * lam, 4)
    scale = np.sqrt(np.outer(np.repeat(s_values, 4), np.repeat(s_values, 4)))
    diag_check = float(np.max(np.abs(D - np.diag(target)) / scale))
    cert = SpectralCertificate(
        betas=betas,
        lambda_stars=lam,
        coeffs=coeffs,
        s_values=s_values,
        eigen_residual=eig_res,
        orth_residual=orth,
        diag_check=diag_check,
        min_eigenvalue=float(np.linalg.eigvalsh(C)[0]),
        C=C,
        U=U,
        tol=tol,
    )
    if check and not cert.passed:
        raise VerificationError(
            f"spectral certificate failed: eigen {eig_res:.3g}, orth {orth:.3g}, diag {diag_check:.3g}, "
            f"min eig {cert.min_eigenvalue:.3g}"
        )
    return cert


# ---------------------------------------------------------------------------
# simulation results and diversity estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurvePoint:
    x: float
    trials: int
    errors: int
    low_confidence: bool = False

    def __post_init__(self):
        if self.trials <= 0:
            raise ValueError("trials must be positive")
        if not 0 <= self.errors <= self.trials:
            raise ValueError("errors must lie in [0, trials]")

    @property
    def y(self) -> float:
        return self.errors / self.trials

    def to_dict(self) -> dict:
        d = asdict(self)
        d["y"] = self.y
        return d


@dataclass
class SimResult:
    """Labelled curve of rates versus SNR in dB (or outage threshold)."""

    points: list
    label: str = ""
    seed: int | None = None

    def xs(self) -> np.ndarray:
        return np.array([p.x for p in self.points], dtype=float)

    def ys(self) -> np.ndarray:
        return np.array([p.y for p in self.points], dtype=float)

    def to_dict(self) -> dict:
        return {"points": [p.to_dict() for p in self.points], "label": self.label, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SimResult":
        pts = [CurvePoint(p["x"], int(p["trials"]), int(p["errors"]), bool(p.get("low_confidence", False))) for p in d["points"]]
        return cls(pts, d.get("label", ""), d.get("seed"))


def loglog_slope(x, y, weights=None) -> float:
    """Least-squares slope of ``log10 y`` against ``log10 x``."""
    lx = np.log10(np.asarray(x, dtype=float))
    ly = np.log10(np.asarray(y, dtype=float))
    w = None if weights is None else np.sqrt(np.asarray(weights, dtype=float))
    return float(np.polyfit(lx, ly, 1, w=w)[0])


def outage_diversity_estimate(snr_sampler, eps_grid, samples: int, min_count: int = 100, label: str = "outage", seed=None):
    """Outage diversity: slope of ``log P{snr < eps}`` against ``log eps``.

    ``snr_sampler`` is either a callable ``n -> array`` or an array of
    already drawn instantaneous SNR values.

    Returns ``(slope, SimResult)``; each point has ``trials = samples`` and
    ``errors`` = number of samples below ``eps``.
    """
    eps = np.asarray(eps_grid, dtype=float)
    values = np.asarray(snr_sampler(samples) if callable(snr_sampler) else snr_sampler, dtype=float).reshape(-1)
    if values.size != samples:
        raise ValueError(f"sampler returned {values.size} values, expected {samples}")
    counts = np.searchsorted(np.sort(values), eps, side="left")
    return outage_fit(eps, counts, samples, min_count=min_count, label=label, seed=seed)


def outage_fit(eps_grid, counts, samples: int, min_count: int = 100, label: str = "outage", seed=None):
    """Slope and curve from precomputed counts ``#{snr < eps}`` out of ``samples``."""
    eps = np.asarray(eps_grid, dtype=float)
    counts = np.asarray(counts, dtype=np.int64)
    if eps.ndim != 1 or eps.size < 3:
        raise ValueError("need at least 3 thresholds")
    if np.any(np.diff(eps) <= 0) or np.any(eps <= 0):
        raise ValueError("thresholds must be positive and ascending")
    for e, c in zip(eps, counts):
        if c < min_count:
            raise InsufficientCountsError(f"only {c} samples below eps={e:g} (need {min_count})")
    curve = SimResult([CurvePoint(float(e), int(samples), int(c)) for e, c in zip(eps, counts)], label, seed)
    return loglog_slope(eps, counts / samples, weights=counts), curve


def ber_diversity_estimate(curve: SimResult, fit_window_db=(-np.inf, np.inf), min_errors: int = 100) -> float:
    """Negative log-log slope of error rate versus linear SNR inside the window."""
    lo, hi = fit_window_db
    pts = [p for p in curve.points if lo <= p.x <= hi]
    if len(pts) < 3:
        raise InsufficientCountsError(f"need >= 3 points inside [{lo}, {hi}] dB, have {len(pts)}")
    for p in pts:
        if p.errors < min_errors:
            raise InsufficientCountsError(f"point at {p.x} dB has {p.errors} errors (need {min_errors})")
    snr = 10 ** (np.array([p.x for p in pts]) / 10)
    return -loglog_slope(snr, [p.y for p in pts], weights=[p.errors for p in pts])
