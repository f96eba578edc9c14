"""Rayleigh channel and noise generation, and the forward transmission model.

Noise convention: every complex noise sample has variance ``2/snr``
(``E[n n^*] = (2/snr) I``), with unit-energy symbols and no per-antenna
power scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cxmat import DimensionError

__all__ = [
    "ChannelRealization",
    "NoiseModel",
    "RealChannelDecomposition",
    "stream",
    "complex_normal",
    "sample_channel",
    "transmit",
    "decompose_real",
    "compose_real",
]


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based random stream keyed by ``(seed, *key)``.

    Streams with different keys are statistically independent, so work
    split by key can be computed in any order or in parallel.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with the given variance."""
    parts = rng.standard_normal(tuple(np.atleast_1d(shape)) + (2,))
    return (parts[..., 0] + 1j * parts[..., 1]) * np.sqrt(variance / 2)


@dataclass(frozen=True)
class ChannelRealization:
    """Fading coefficients ``coeffs[..., j, n, m]`` (user, tx antenna, rx antenna)."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.ndim < 3:
            raise DimensionError("coefficients need (J, N, M) axes")
        object.__setattr__(self, "coeffs", c)

    @property
    def J(self) -> int:
        return self.coeffs.shape[-3]

    @property
    def N(self) -> int:
        return self.coeffs.shape[-2]

    @property
    def M(self) -> int:
        return self.coeffs.shape[-1]

    def user(self, j: int) -> np.ndarray:
        return self.coeffs[..., j, :, :]


@dataclass(frozen=True)
class NoiseModel:
    snr: float

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("snr must be positive")

    @classmethod
    def from_db(cls, snr_db: float) -> "NoiseModel":
        return cls(10.0 ** (snr_db / 10.0))

    @property
    def per_sample_variance(self) -> float:
        return 2.0 / self.snr


def sample_channel(J: int, N: int, M: int, rng: np.random.Generator, batch=()) -> ChannelRealization:
    """i.i.d. CN(0, 1) coefficients, shape ``batch + (J, N, M)``."""
    if min(J, N, M) < 1:
        raise ValueError("J, N and M must all be >= 1")
    return ChannelRealization(complex_normal(rng, tuple(np.atleast_1d(batch).astype(int)) + (J, N, M)))


def transmit(codewords, channel, noise: NoiseModel | None = None, rng=None, *, noiseless: bool = False):
    """Superimpose all users' codewords through the channel and add noise.

    Parameters
    ----------
    codewords : array ``(..., J, T, N)``
    channel : ChannelRealization or array ``(..., J, N, M)``
    noise : NoiseModel, required unless ``noiseless``
    rng : numpy Generator used for the noise samples
    noiseless : bool
        Explicitly switch noise off (for structural tests).

    Returns
    -------
    received : array ``(..., T, M)``
    """
    x = np.asarray(codewords, dtype=np.complex128)
    h = channel.coeffs if isinstance(channel, ChannelRealization) else np.asarray(channel, dtype=np.complex128)
    if x.ndim < 3 or h.ndim < 3:
        raise DimensionError("codewords need (J, T, N) axes and channel (J, N, M) axes")
    if x.shape[-3] != h.shape[-3] or x.shape[-1] != h.shape[-2]:
        raise DimensionError(f"codewords {x.shape[-3:]} do not match channel {h.shape[-3:]}")
    r = np.einsum("...jtn,...jnm->...tm", x, h)
    if noiseless:
        return r
    if noise is None or rng is None:
        raise ValueError("noise model and rng are required unless noiseless=True")
    return r + complex_normal(rng, r.shape, noise.per_sample_variance)


@dataclass(frozen=True)
class RealChannelDecomposition:
    """Real unpacking of one user pair's Alamouti coefficients.

    ``a`` holds the first user's (``h``) parts and ``b`` the interferer's
    (``g``), four reals per receive antenna. For receive antenna 1::

        h11 = a1 - j a2     h21 = -a3 + j a4
        g11 = b1 + j b2     g21 =  b3 - j b4

    and for every further antenna ``m`` (offset ``k = 4(m-1)``)::

        h1m = -a[k+1] - j a[k+2]     h2m = -a[k+3] - j a[k+4]
        g1m =  b[k+1] + j b[k+2]     g2m =  b[k+3] + j b[k+4]
    """

    a: np.ndarray
    b: np.ndarray

    @property
    def M(self) -> int:
        return self.a.shape[-1] // 4


def _check_pair(h, g):
    h = np.asarray(h, dtype=np.complex128)
    g = np.asarray(g, dtype=np.complex128)
    if h.shape[-2] != 2 or h.shape != g.shape:
        raise DimensionError("need matching (2, M) coefficient arrays")
    return h, g


def decompose_real(h, g) -> RealChannelDecomposition:
    """Real variables for coefficient arrays ``h`` and ``g`` of shape ``(..., 2, M)``."""
    h, g = _check_pair(h, g)
    M = h.shape[-1]
    a = np.empty(h.shape[:-2] + (4 * M,))
    b = np.empty_like(a)
    a[..., 0], a[..., 1] = h[..., 0, 0].real, -h[..., 0, 0].imag
    a[..., 2], a[..., 3] = -h[..., 1, 0].real, h[..., 1, 0].imag
    b[..., 0], b[..., 1] = g[..., 0, 0].real, g[..., 0, 0].imag
    b[..., 2], b[..., 3] = g[..., 1, 0].real, -g[..., 1, 0].imag
    for m in range(1, M):
        k = 4 * m
        a[..., k], a[..., k + 1] = -h[..., 0, m].real, -h[..., 0, m].imag
        a[..., k + 2], a[..., k + 3] = -h[..., 1, m].real, -h[..., 1, m].imag
        b[..., k], b[..., k + 1] = g[..., 0, m].real, g[..., 0, m].imag
        b[..., k + 2], b[..., k + 3] = g[..., 1, m].real, g[..., 1, m].imag
    return RealChannelDecomposition(a, b)


def compose_real(d: RealChannelDecomposition):
    """Inverse of :func:`decompose_real`; returns ``(h, g)`` of shape ``(..., 2, M)``."""
    a = np.asarray(d.a, dtype=float)
    b = np.asarray(d.b, dtype=float)
    if a.shape != b.shape or a.shape[-1] % 4 or a.shape[-1] == 0:
        raise DimensionError("a and b must have equal length, a multiple of 4")
    M = a.shape[-1] // 4
    h = np.empty(a.shape[:-1] + (2, M), dtype=np.complex128)
    g = np.empty_like(h)
    h[..., 0, 0] = a[..., 0] - 1j * a[..., 1]
    h[..., 1, 0] = -a[..., 2] + 1j * a[..., 3]
    g[..., 0, 0] = b[..., 0] + 1j * b[..., 1]
    g[..., 1, 0] = b[..., 2] - 1j * b[..., 3]
    for m in range(1, M):
        k = 4 * m
        h[..., 0, m] = -a[..., k] - 1j * a[..., k + 1]
        h[..., 1, m] = -a[..., k + 2] - 1j * a[..., k + 3]
        g[..., 0, m] = b[..., k] + 1j * b[..., k + 1]
        g[..., 1, m] = b[..., k + 2] + 1j * b[..., k + 3]
    return h, g
