"""Multi-user detectors.

Three families:

* joint maximum likelihood over all users' symbols (:func:`ml_joint_detect`);
* array-processing interference cancellation, which removes one interfering
  user per round and leaves a single-user :class:`EquivalentSystem`
  (:func:`ap_cancel_pair`, :func:`ap_cancel_general`, and the
  quasi-orthogonal pipeline :func:`qostbc_ap_detect`);
* whitened ML on the cancelled system (:func:`whitened_ml_decode`), which
  still decodes the two Alamouti symbols separately.

Cancellation rounds use the normalized form: with ``K_i`` the blocks of the
user being removed, the output rows are ``K_{i+1}^{-1} r_{i+1} - K_1^{-1} r_1``
where ``K^{-1} = K^H / ||K||^2``.

All functions accept leading batch axes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .cxmat import (
    STRUCT_TOL,
    SingularMatrixError,
    alamouti_inv_matrix,
    alamouti_norm_sq,
    hermitian,
)
from .fading import ChannelRealization
from .stcodes import (
    Constellation,
    alamouti_blocks,
    alamouti_encode,
    qostbc_encode,
    qostbc_merge,
    qostbc_split,
    qostbc_virtual_channel,
    to_conj_domain,
)

__all__ = [
    "EquivalentSystem",
    "QostbcSystem",
    "Decision",
    "CapExceededError",
    "NotPositiveDefiniteError",
    "ml_joint_detect",
    "ap_cancel_pair",
    "cancel_users",
    "ap_cancel_general",
    "noise_correlation",
    "whitened_ml_decode",
    "separate_decode",
    "qostbc_ap_system",
    "qostbc_decode",
    "qostbc_ap_detect",
    "DEFAULT_ML_CAP",
]

DEFAULT_ML_CAP = 1 << 16
ML_WORK_ELEMENTS = 1 << 20  # trials x candidates evaluated at once by ml_joint_detect


class CapExceededError(ValueError):
    """Exhaustive search would exceed the configured candidate cap."""


class NotPositiveDefiniteError(ValueError):
    pass


@dataclass
class EquivalentSystem:
    """Single-user system ``observations = channel @ c + noise`` left after cancellation.

    ``channel`` is ``(..., D, 2)``, ``observations`` ``(..., D)`` and
    ``noise_cov`` ``(..., D, D)``, with ``D = 2 * (M - J + 1)``.
    ``meta`` records the cancellation: ``order`` (users removed, in turn),
    ``transform`` (the composite linear map applied to the stacked
    conjugated reception) and ``degenerate`` (channel numerically zero).
    """

    channel: np.ndarray
    observations: np.ndarray
    noise_cov: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.channel.shape[-2]


@dataclass
class Decision:
    """Symbol indices chosen by a detector and the attained metric."""

    indices: np.ndarray
    metric: np.ndarray


def _coeffs(channels) -> np.ndarray:
    if isinstance(channels, ChannelRealization):
        return channels.coeffs
    return np.asarray(channels, dtype=np.complex128)


def _index_tuples(q: int, k: int) -> np.ndarray:
    """All length-``k`` index tuples over ``range(q)`` in lexicographic order."""
    return np.array(list(itertools.product(range(q), repeat=k)), dtype=np.int64).reshape(-1, k)


def _codebook(constellation: Constellation, code: str):
    if code == "alamouti":
        idx = _index_tuples(constellation.size, 2)
        return idx, alamouti_encode(constellation.points[idx])
    if code == "qostbc":
        idx = _index_tuples(constellation.size, 4)
        return idx, qostbc_encode(constellation.points[idx], constellation.rotation)
    raise ValueError(f"unknown code {code!r}")


# ---------------------------------------------------------------------------
# joint ML
# ---------------------------------------------------------------------------


def ml_joint_detect(received, channels, constellation: Constellation, code: str = "alamouti", cap: int = DEFAULT_ML_CAP) -> Decision:
    """Exhaustive joint ML over every user's symbols.

    Minimizes ``||Y - sum_j X_j(c_j) H_j||^2`` over all symbol tuples, where
    ``Y`` is the raw ``(..., T, M)`` reception and ``H_j`` the ``(N, M)``
    channel of user ``j``. Ties go to the lowest index tuple.

    Returns indices of shape ``(..., J, K)`` (``K`` symbols per user).
    """
    y = np.asarray(received, dtype=np.complex128)
    h = _coeffs(channels)
    J = h.shape[-3]
    idx, words = _codebook(constellation, code)
    per_user = idx.shape[0]
    if per_user**J > cap:
        raise CapExceededError(
            f"{per_user}^{J} = {per_user**J} candidates exceed cap {cap}; use fewer users, a smaller "
            "constellation, or raise the cap"
        )
    T, M = y.shape[-2:]
    batch = y.shape[:-2]
    hb = np.broadcast_to(h, batch + h.shape[-3:]).reshape((-1,) + h.shape[-3:])
    yb = y.reshape((-1, T, M))
    step = max(1, ML_WORK_ELEMENTS // per_user**J)  # bounds the candidate tensor's memory
    best = np.empty(yb.shape[0], dtype=np.int64)
    best_metric = np.empty(yb.shape[0])
    for s in range(0, yb.shape[0], step):
        total = None
        for j in range(J):
            sig = np.einsum("ktn,bnm->bktm", words, hb[s : s + step, j])
            sig = sig.reshape(sig.shape[:1] + (1,) * j + (per_user,) + (1,) * (J - j - 1) + (T, M))
            total = sig if total is None else total + sig
        resid = yb[s : s + step].reshape((-1,) + (1,) * J + (T, M)) - total
        metric = np.sum(resid.real**2 + resid.imag**2, axis=(-2, -1)).reshape(resid.shape[0], -1)
        best[s : s + step] = np.argmin(metric, axis=-1)
        best_metric[s : s + step] = np.take_along_axis(metric, best[s : s + step, None], axis=-1)[:, 0]
    flat = np.unravel_index(best.reshape(batch), (per_user,) * J)
    indices = np.stack([idx[f] for f in flat], axis=-2)
    return Decision(indices, best_metric.reshape(batch))


# ---------------------------------------------------------------------------
# array-processing cancellation
# ---------------------------------------------------------------------------


def _round_map(kinv) -> np.ndarray:
    """Map ``(..., 2(R-1), 2R)`` with rows ``K_{i+1}^{-1} r_{i+1} - K_1^{-1} r_1``."""
    R = kinv.shape[-3]
    t = np.zeros(kinv.shape[:-3] + (2 * (R - 1), 2 * R), dtype=np.complex128)
    for i in range(R - 1):
        t[..., 2 * i : 2 * i + 2, 0:2] = -kinv[..., 0, :, :]
        t[..., 2 * i : 2 * i + 2, 2 * i + 2 : 2 * i + 4] = kinv[..., i + 1, :, :]
    return t


def _flat(blocks) -> np.ndarray:
    """``(..., R, 2, 2)`` -> stacked ``(..., 2R, 2)``."""
    return blocks.reshape(blocks.shape[:-3] + (-1, 2))


def _degenerate(channel) -> np.ndarray:
    return alamouti_norm_sq(channel) <= STRUCT_TOL


def cancel_users(obs, blocks, target: int, order=None, noise_cov=None, sigma_sq: float = 1.0) -> EquivalentSystem:
    """Remove every user except ``target`` from a conjugated-domain reception.

    Parameters
    ----------
    obs : array ``(..., R, 2)``
        One conjugated 2-vector per receive antenna (row).
    blocks : array ``(..., J, R, 2, 2)``
        Alamouti channel blocks per user and row.
    target : int
        User kept in the output.
    order : sequence of int, optional
        Users to remove, in turn. Default: all other users, highest index
        first.
    noise_cov : array ``(..., 2R, 2R)``, optional
        Input noise covariance; ``sigma_sq * I`` when omitted.
    """
    obs = np.asarray(obs, dtype=np.complex128)
    blocks = np.asarray(blocks, dtype=np.complex128)
    J, R = blocks.shape[-4], blocks.shape[-3]
    if obs.shape[-2] != R:
        raise ValueError(f"{obs.shape[-2]} observation rows for {R} channel rows")
    if not 0 <= target < J:
        raise ValueError(f"target user {target} out of range for J={J}")
    if order is None:
        order = [j for j in range(J - 1, -1, -1) if j != target]
    order = [int(u) for u in order]
    if sorted(order + [target]) != list(range(J)):
        raise ValueError(f"cancellation order {order} must list every user except {target} once")
    if R < J:
        raise ValueError(f"array processing needs M >= J (got M={R}, J={J})")
    batch = obs.shape[:-2]
    D = 2 * R
    cov = sigma_sq * np.broadcast_to(np.eye(D, dtype=np.complex128), batch + (D, D)) if noise_cov is None else np.asarray(noise_cov, dtype=np.complex128)
    transform = np.broadcast_to(np.eye(D, dtype=np.complex128), batch + (D, D))
    x = obs.reshape(batch + (D,))
    users = list(range(J))
    flat_blocks = {j: _flat(blocks[..., j, :, :, :]) for j in users}
    for u in order:
        k = flat_blocks[u].reshape(batch + (-1, 2, 2))
        try:
            kinv = alamouti_inv_matrix(k)
        except SingularMatrixError as exc:
            raise SingularMatrixError(f"user {u} has a singular channel block") from exc
        t = _round_map(kinv)
        x = np.einsum("...ij,...j->...i", t, x)
        cov = t @ cov @ hermitian(t)
        transform = t @ transform
        del flat_blocks[u]
        for j in flat_blocks:
            flat_blocks[j] = t @ flat_blocks[j]
    channel = flat_blocks[target]
    return EquivalentSystem(
        channel=channel,
        observations=x,
        noise_cov=cov,
        meta={"order": order, "target": target, "transform": transform, "degenerate": _degenerate(channel)},
    )


def ap_cancel_general(received, channels, target_user: int = 0, sigma_sq: float = 1.0, order=None) -> EquivalentSystem:
    """Array-processing cancellation for ``J`` Alamouti users and ``M >= J`` antennas.

    ``received`` is the raw ``(..., 2, M)`` reception, ``channels`` a
    :class:`ChannelRealization` or ``(..., J, 2, M)`` array. ``sigma_sq`` is
    the per-sample noise variance used for ``noise_cov``.
    """
    h = _coeffs(channels)
    if h.shape[-2] != 2:
        raise ValueError("ap_cancel_general handles the 2-antenna Alamouti code; use qostbc_ap_detect for N=4")
    if h.shape[-1] < h.shape[-3]:
        raise ValueError(f"array processing needs M >= J (got M={h.shape[-1]}, J={h.shape[-3]})")
    return cancel_users(to_conj_domain(received), alamouti_blocks(h), target_user, order=order, sigma_sq=sigma_sq)


def ap_cancel_pair(r1, r2, H1, H2, G1, G2, sigma_sq: float = 1.0, form: str = "normalized"):
    """Two-user, two-antenna cancellation.

    ``r1, r2`` are conjugated-domain 2-vectors of antennas 1 and 2 and
    ``H_i``/``G_i`` the 2x2 Alamouti blocks of the users sending ``c`` and
    ``s``. Returns ``(system_c, system_s)``.

    ``form="normalized"`` (default) outputs ``G2^{-1} r2 - G1^{-1} r1`` for
    ``c`` and ``H2^{-1} r2 - H1^{-1} r1`` for ``s``. ``form="block"`` applies
    ``[[I, -G1 G2^{-1}], [-H2 H1^{-1}, I]]`` instead; the two differ by an
    invertible left factor per output, so decisions coincide.
    """
    r = np.stack([np.asarray(r1, dtype=np.complex128), np.asarray(r2, dtype=np.complex128)], axis=-2)
    Hs = np.stack([np.asarray(H1, dtype=np.complex128), np.asarray(H2, dtype=np.complex128)], axis=-3)
    Gs = np.stack([np.asarray(G1, dtype=np.complex128), np.asarray(G2, dtype=np.complex128)], axis=-3)
    blocks = np.stack([Hs, Gs], axis=-4)
    sys_c = cancel_users(r, blocks, target=0, sigma_sq=sigma_sq)
    sys_s = cancel_users(r, blocks, target=1, sigma_sq=sigma_sq)
    if form == "normalized":
        return sys_c, sys_s
    if form != "block":
        raise ValueError(f"unknown form {form!r}")
    # block form = (-G1) @ normalized for c, (-H1) @ normalized for s
    out = []
    for sys, left in ((sys_c, -np.asarray(G1, dtype=np.complex128)), (sys_s, -np.asarray(H1, dtype=np.complex128))):
        channel = left @ sys.channel
        out.append(
            EquivalentSystem(
                channel=channel,
                observations=np.einsum("...ij,...j->...i", left, sys.observations),
                noise_cov=left @ sys.noise_cov @ hermitian(left),
                meta=dict(sys.meta, transform=left @ sys.meta["transform"], degenerate=_degenerate(channel), form="block"),
            )
        )
    return tuple(out)


def noise_correlation(G, sigma_sq: float = 1.0) -> np.ndarray:
    """Closed-form covariance after one cancellation round.

    ``G`` holds the removed user's blocks ``(..., M, 2, 2)``. Returns the
    ``2(M-1)``-square matrix ``P (x) I_2`` where ``P`` has diagonal
    ``sigma^2/||G_{i+1}||^2 + sigma^2/||G_1||^2`` and every off-diagonal entry
    ``sigma^2/||G_1||^2``.
    """
    G = np.asarray(G, dtype=np.complex128)
    norms = alamouti_norm_sq(G)
    if np.any(norms <= STRUCT_TOL):
        raise SingularMatrixError("zero interferer block")
    M = G.shape[-3]
    if M < 2:
        raise ValueError("need at least two receive antennas")
    base = sigma_sq / norms[..., 0]
    pattern = np.broadcast_to(base[..., None, None], norms.shape[:-1] + (M - 1, M - 1)).copy()
    pattern += np.einsum("...i,ij->...ij", sigma_sq / norms[..., 1:], np.eye(M - 1))
    return np.kron(pattern, np.eye(2)) if pattern.ndim == 2 else np.einsum("...ij,kl->...ikjl", pattern, np.eye(2)).reshape(pattern.shape[:-2] + (2 * (M - 1), 2 * (M - 1)))


# ---------------------------------------------------------------------------
# decoding the cancelled system
# ---------------------------------------------------------------------------


def _whiten(channel, obs, cov):
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("noise covariance is not positive definite") from exc
    hw = np.linalg.solve(L, channel)
    ow = np.linalg.solve(L, obs[..., None])[..., 0]
    return hw, ow


def _sufficient_stats(sys: EquivalentSystem, whiten: bool):
    if whiten:
        hw, ow = _whiten(sys.channel, sys.observations, sys.noise_cov)
    else:
        hw, ow = sys.channel, sys.observations
    gram = hermitian(hw) @ hw
    y = np.einsum("...ji,...j->...i", np.conj(hw), ow)
    energy = np.sum(np.abs(ow) ** 2, axis=-1)
    return gram, y, energy


def whitened_ml_decode(sys: EquivalentSystem, constellation: Constellation, whiten: bool = True) -> Decision:
    """Joint ML for the two symbols: ``argmin (r - Hc)^H C_n^{-1} (r - Hc)``.

    Exhaustive over all symbol pairs, ties to the lowest index pair. With
    ``whiten=False`` the covariance is ignored (plain Euclidean metric).
    """
    gram, y, energy = _sufficient_stats(sys, whiten)
    idx = _index_tuples(constellation.size, 2)
    c = constellation.points[idx]
    quad = np.einsum("ki,...ij,kj->...k", np.conj(c), gram, c).real
    lin = np.einsum("ki,...i->...k", np.conj(c), y).real
    metric = quad - 2 * lin + energy[..., None]
    best = np.argmin(metric, axis=-1)
    return Decision(idx[best], np.take_along_axis(metric, best[..., None], axis=-1)[..., 0])


def separate_decode(sys: EquivalentSystem, constellation: Constellation, whiten: bool = True) -> Decision:
    """Decode each symbol on its own, dropping cross terms of the metric.

    Exact whenever ``H^H C_n^{-1} H`` is a multiple of the identity, which
    holds for every system produced by Alamouti cancellation.
    """
    gram, y, energy = _sufficient_stats(sys, whiten)
    pts = constellation.points
    diag = np.stack([gram[..., 0, 0].real, gram[..., 1, 1].real], axis=-1)
    per = diag[..., None] * np.abs(pts) ** 2 - 2 * (np.conj(pts) * y[..., None]).real
    best = np.argmin(per, axis=-1)
    metric = np.take_along_axis(per, best[..., None], axis=-1)[..., 0].sum(axis=-1) + energy
    return Decision(best, metric)


# ---------------------------------------------------------------------------
# quasi-orthogonal pipeline
# ---------------------------------------------------------------------------


@dataclass
class QostbcSystem:
    """Single-user quasi-orthogonal system rebuilt after branch-wise cancellation.

    ``channel`` is ``(..., R, 4)`` (one merged channel vector per output),
    ``samples`` ``(..., R, 4)`` the rebuilt raw samples, and ``noise_cov``
    ``(..., 4R, 4R)`` the covariance of the conjugated-domain vectors
    ``(R1, -R2*, R3, -R4*)`` stacked per output. ``plus``/``minus`` are the
    branch systems the merge was built from.
    """

    channel: np.ndarray
    samples: np.ndarray
    noise_cov: np.ndarray
    plus: EquivalentSystem
    minus: EquivalentSystem

    def conj_observations(self) -> np.ndarray:
        s = self.samples
        w = np.stack([s[..., 0], -np.conj(s[..., 1]), s[..., 2], -np.conj(s[..., 3])], axis=-1)
        return w.reshape(w.shape[:-2] + (-1,))


def _merge_matrix(R: int) -> np.ndarray:
    """Real map from stacked branch vectors ``(p_flat, m_flat)`` to merged conjugated vectors."""
    q = np.zeros((4 * R, 4 * R))
    for i in range(R):
        p, m, w = 2 * i, 2 * R + 2 * i, 4 * i
        q[w + 0, p + 0] = q[w + 0, m + 0] = 0.5
        q[w + 1, p + 1] = q[w + 1, m + 1] = 0.5
        q[w + 2, p + 0], q[w + 2, m + 0] = 0.5, -0.5
        q[w + 3, p + 1], q[w + 3, m + 1] = 0.5, -0.5
    return q


def qostbc_ap_system(received, channels, target_user: int = 0, sigma_sq: float = 1.0, order=None) -> QostbcSystem:
    """Split, cancel on both branches, and merge back to one quasi-orthogonal system.

    ``received`` is ``(..., 4, M)`` and ``channels`` ``(..., J, 4, M)``.
    """
    y = np.asarray(received, dtype=np.complex128)
    h = _coeffs(channels)
    if h.shape[-2] != 4 or y.shape[-2] != 4:
        raise ValueError("quasi-orthogonal pipeline needs N = 4 and 4 time slots")
    J, M = h.shape[-3], h.shape[-1]
    if M < J:
        raise ValueError(f"array processing needs M >= J (got M={M}, J={J})")
    plus, minus = qostbc_split(y[..., None, :, :], h)
    # the branch noise is n1 +/- n3 etc., so each branch sample has variance 2 sigma^2
    sys_p = cancel_users(plus.obs[..., 0, :, :], plus.blocks, target_user, order=order, sigma_sq=2 * sigma_sq)
    sys_m = cancel_users(minus.obs[..., 0, :, :], minus.blocks, target_user, order=order, sigma_sq=2 * sigma_sq)
    R = M - J + 1
    batch = sys_p.channel.shape[:-2]
    a_p = sys_p.channel.reshape(batch + (R, 2, 2))
    a_m = sys_m.channel.reshape(batch + (R, 2, 2))
    merged = qostbc_merge(a_p, a_m)
    p = sys_p.observations.reshape(batch + (R, 2))
    m = sys_m.observations.reshape(batch + (R, 2))
    samples = np.stack(
        [(p[..., 0] + m[..., 0]) / 2, -np.conj(p[..., 1] + m[..., 1]) / 2, (p[..., 0] - m[..., 0]) / 2, -np.conj(p[..., 1] - m[..., 1]) / 2],
        axis=-1,
    )
    q = _merge_matrix(R)
    zero = np.zeros(batch + (2 * R, 2 * R), dtype=np.complex128)
    branch_cov = np.concatenate(
        [np.concatenate([sys_p.noise_cov, zero], axis=-1), np.concatenate([zero, sys_m.noise_cov], axis=-1)], axis=-2
    )
    cov = q @ branch_cov @ q.T
    return QostbcSystem(merged, samples, cov, sys_p, sys_m)


def qostbc_decode(sys: QostbcSystem, constellation: Constellation, whiten: bool = True, pairwise: bool = True) -> Decision:
    """ML decoding of a merged quasi-orthogonal system.

    With ``pairwise=True`` the metric is split into a ``(c1, c3)`` part and a
    ``(c2, c4)`` part, each searched over ``|Q|^2`` pairs; ``pairwise=False``
    searches all ``|Q|^4`` tuples (used as a cross-check).
    """
    V = qostbc_virtual_channel(sys.channel)
    V = V.reshape(V.shape[:-3] + (-1, 4))
    w = sys.conj_observations()
    eq = EquivalentSystem(V, w, sys.noise_cov)
    gram, y, energy = _sufficient_stats(eq, whiten)
    pts = constellation.points
    rot = constellation.rotated_points
    if not pairwise:
        idx = _index_tuples(constellation.size, 4)
        c = np.stack([pts[idx[:, 0]], pts[idx[:, 1]], rot[idx[:, 2]], rot[idx[:, 3]]], axis=-1)
        quad = np.einsum("ki,...ij,kj->...k", np.conj(c), gram, c).real
        lin = np.einsum("ki,...i->...k", np.conj(c), y).real
        metric = quad - 2 * lin + energy[..., None]
        best = np.argmin(metric, axis=-1)
        return Decision(idx[best], np.take_along_axis(metric, best[..., None], axis=-1)[..., 0])
    pair_idx = _index_tuples(constellation.size, 2)
    a = pts[pair_idx[:, 0]]
    b = rot[pair_idx[:, 1]]
    chosen = np.empty(gram.shape[:-2] + (4,), dtype=np.int64)
    total = energy.copy()
    for first, second in ((0, 2), (1, 3)):
        g11 = gram[..., first, first].real[..., None]
        g33 = gram[..., second, second].real[..., None]
        g13 = gram[..., first, second][..., None]
        metric = (
            g11 * np.abs(a) ** 2
            + g33 * np.abs(b) ** 2
            + 2 * (np.conj(a) * g13 * b).real
            - 2 * (np.conj(a) * y[..., first, None] + np.conj(b) * y[..., second, None]).real
        )
        best = np.argmin(metric, axis=-1)
        chosen[..., first] = pair_idx[best, 0]
        chosen[..., second] = pair_idx[best, 1]
        total = total + np.take_along_axis(metric, best[..., None], axis=-1)[..., 0]
    return Decision(chosen, total)


def qostbc_ap_detect(received, channels, target_user: int, constellation: Constellation, sigma_sq: float = 1.0, whiten: bool = True, order=None) -> Decision:
    """Full quasi-orthogonal array-processing detector for ``J`` users and ``M >= J`` antennas."""
    sys = qostbc_ap_system(received, channels, target_user, sigma_sq=sigma_sq, order=order)
    return qostbc_decode(sys, constellation, whiten=whiten)
