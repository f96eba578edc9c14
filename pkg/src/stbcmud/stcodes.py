"""Constellations and space-time block codes.

Covers the Alamouti code, the 4x4 quasi-orthogonal code in ABBA form, the
stacked equivalent channel of the Alamouti receiver, and the sum/difference
conversion that turns one 4-antenna quasi-orthogonal system into two
independent Alamouti systems (and back).

Conventions
-----------
Codewords are ``(T, N)`` arrays: row = time slot, column = transmit antenna.
Received samples are ``(T, M)`` arrays. Channel coefficients for one user
are ``(N, M)``: ``h[n, m]`` is the gain from transmit antenna ``n`` to
receive antenna ``m``.

For the Alamouti receiver we work in the *conjugated domain*: the two
samples ``y1, y2`` of one receive antenna become ``r = [y1, -conj(y2)]``,
which makes the model linear in the symbols, ``r = H c + n`` with ``H`` an
Alamouti block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .cxmat import AlamoutiBlock, DimensionError

__all__ = [
    "Constellation",
    "SymbolVector",
    "SumDifferencePair",
    "BranchSystem",
    "qpsk",
    "qam16",
    "get_constellation",
    "alamouti_encode",
    "qostbc_encode",
    "abba_construct",
    "abba_recursive",
    "to_conj_domain",
    "alamouti_blocks",
    "equivalent_channel",
    "sum_difference",
    "qostbc_split",
    "qostbc_merge",
    "qostbc_merge_observations",
    "qostbc_virtual_channel",
    "DEFAULT_ROTATION",
]

DEFAULT_ROTATION = np.pi / 4


@dataclass(frozen=True)
class Constellation:
    """Unit average energy point set.

    ``rotation`` is the phase applied to the third and fourth symbols of a
    quasi-orthogonal codeword; it does not change ``points``.
    ``bits_per_symbol`` and :meth:`bits` give a Gray labelling where the
    binary expansion of the point index is the label.
    """

    name: str
    points: np.ndarray = field(repr=False)
    rotation: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.complex128).reshape(-1)
        object.__setattr__(self, "points", pts)
        energy = np.mean(np.abs(pts) ** 2)
        if abs(energy - 1.0) > 1e-12:
            raise ValueError(f"constellation {self.name!r} has energy {energy}")

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.size))

    @property
    def rotated_points(self) -> np.ndarray:
        return self.points * np.exp(1j * self.rotation)

    def with_rotation(self, rotation: float) -> "Constellation":
        return Constellation(self.name, self.points, float(rotation))

    def bits(self, idx):
        """Label bits of symbol indices, shape ``idx.shape + (bits_per_symbol,)``."""
        idx = np.asarray(idx)
        k = self.bits_per_symbol
        shifts = np.arange(k - 1, -1, -1)
        return (idx[..., None] >> shifts) & 1


def qpsk(rotation: float = DEFAULT_ROTATION) -> Constellation:
    """Gray QPSK; bit 1 of the index sets the real sign, bit 0 the imaginary."""
    idx = np.arange(4)
    re = 1 - 2 * (idx >> 1)
    im = 1 - 2 * (idx & 1)
    return Constellation("qpsk", (re + 1j * im) / np.sqrt(2), rotation)


def qam16(rotation: float = 0.0) -> Constellation:
    """Gray 16-QAM; the upper two index bits select the real level."""
    gray_level = {0b00: -3, 0b01: -1, 0b11: 1, 0b10: 3}
    idx = np.arange(16)
    re = np.array([gray_level[int(i) >> 2] for i in idx])
    im = np.array([gray_level[int(i) & 3] for i in idx])
    return Constellation("qam16", (re + 1j * im) / np.sqrt(10), rotation)


_CONSTELLATIONS = {"qpsk": qpsk, "qam16": qam16}


def get_constellation(name: str, rotation: float | None = None) -> Constellation:
    try:
        factory = _CONSTELLATIONS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown constellation {name!r}; choose from {sorted(_CONSTELLATIONS)}")
    return factory() if rotation is None else factory(rotation)


@dataclass(frozen=True)
class SymbolVector:
    """Symbols of one user, carried as indices into ``constellation``."""

    indices: np.ndarray
    constellation: Constellation
    user_id: int = 0

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if np.any((idx < 0) | (idx >= self.constellation.size)):
            raise ValueError("symbol index outside the constellation")
        object.__setattr__(self, "indices", idx)

    @property
    def symbols(self) -> np.ndarray:
        return self.constellation.points[self.indices]

    def __len__(self):
        return self.indices.shape[-1]


def _values(c, n: int) -> np.ndarray:
    if isinstance(c, SymbolVector):
        c = c.symbols
    c = np.asarray(c, dtype=np.complex128)
    if c.ndim == 0 or c.shape[-1] != n:
        raise DimensionError(f"expected {n} symbols, got shape {c.shape}")
    return c


def alamouti_encode(c) -> np.ndarray:
    """``[[c1, c2], [-c2*, c1*]]``; accepts a batch ``(..., 2)``."""
    c = _values(c, 2)
    return AlamoutiBlock(c[..., 0], c[..., 1]).matrix()


def qostbc_encode(c, rotation: float = 0.0) -> np.ndarray:
    """4x4 quasi-orthogonal codeword in ABBA form.

    ``c3`` and ``c4`` are multiplied by ``exp(j*rotation)`` before placement.
    Accepts a batch ``(..., 4)``.
    """
    c = _values(c, 4).copy()
    c[..., 2:] *= np.exp(1j * rotation)
    return abba_construct(alamouti_encode(c[..., :2]), alamouti_encode(c[..., 2:]))


def abba_construct(sub_a, sub_b) -> np.ndarray:
    """Block matrix ``[[A, B], [B, A]]``."""
    a = np.asarray(sub_a, dtype=np.complex128)
    b = np.asarray(sub_b, dtype=np.complex128)
    if a.ndim < 2 or a.shape != b.shape or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"ABBA needs equal square blocks, got {a.shape} and {b.shape}")
    top = np.concatenate([a, b], axis=-1)
    bottom = np.concatenate([b, a], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def abba_recursive(c, depth: int) -> np.ndarray:
    """ABBA code for ``N = 2**depth`` antennas from ``N`` symbols.

    Depth 1 is the Alamouti code; each further level splits the symbols in
    halves and places the two half-size codes in ABBA form.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    c = _values(c, 2**depth)
    if depth == 1:
        return alamouti_encode(c)
    half = 2 ** (depth - 1)
    return abba_construct(abba_recursive(c[..., :half], depth - 1), abba_recursive(c[..., half:], depth - 1))


def to_conj_domain(y) -> np.ndarray:
    """Map raw Alamouti samples ``(..., 2, M)`` to ``(..., M, 2)`` vectors ``[y1, -y2*]``."""
    y = np.asarray(y, dtype=np.complex128)
    if y.shape[-2] != 2:
        raise DimensionError(f"Alamouti reception needs 2 time slots, got {y.shape[-2]}")
    out = np.stack([y[..., 0, :], -np.conj(y[..., 1, :])], axis=-1)
    return out


def alamouti_blocks(h) -> np.ndarray:
    """Per-antenna Alamouti blocks ``(..., M, 2, 2)`` from coefficients ``(..., 2, M)``."""
    h = np.asarray(h, dtype=np.complex128)
    if h.shape[-2] != 2:
        raise DimensionError(f"Alamouti channel needs 2 transmit antennas, got {h.shape[-2]}")
    return AlamoutiBlock(h[..., 0, :], h[..., 1, :]).matrix()


def equivalent_channel(h) -> np.ndarray:
    """Stacked equivalent channel ``(..., 2M, 2)`` for coefficients ``(..., 2, M)``.

    Block ``i`` is ``[[h1i, h2i], [-h2i*, h1i*]]`` so that the conjugated
    reception ``[r1i, -r2i*]`` equals ``block_i @ c`` plus noise.
    """
    blocks = alamouti_blocks(h)
    return blocks.reshape(blocks.shape[:-3] + (-1, 2))


@dataclass(frozen=True)
class SumDifferencePair:
    plus: np.ndarray
    minus: np.ndarray

    def reconstruct(self) -> np.ndarray:
        """Recover the originating 4-vector ``(v1, v2, v3, v4)``."""
        first = (self.plus + self.minus) / 2
        second = (self.plus - self.minus) / 2
        return np.concatenate([first, second], axis=-1)


def sum_difference(v) -> SumDifferencePair:
    """``plus = (v1+v3, v2+v4)``, ``minus = (v1-v3, v2-v4)`` along the last axis."""
    v = _values(v, 4)
    return SumDifferencePair(v[..., :2] + v[..., 2:], v[..., :2] - v[..., 2:])


class BranchSystem(NamedTuple):
    """One Alamouti branch of a split quasi-orthogonal reception.

    ``obs`` is ``(..., M, 2)`` (conjugated domain) and ``blocks`` the matching
    ``(..., M, 2, 2)`` Alamouti channel blocks.
    """

    obs: np.ndarray
    blocks: np.ndarray


def qostbc_split(r, h):
    """Split a 4-antenna quasi-orthogonal reception into sum and difference branches.

    Parameters
    ----------
    r : array ``(..., 4, M)``
        Raw received samples (4 time slots per receive antenna).
    h : array ``(..., 4, M)``
        Channel coefficients of the user whose blocks are wanted. Extra
        leading axes (e.g. a user axis) broadcast.

    Returns
    -------
    (plus, minus) : BranchSystem, BranchSystem
        ``plus`` carries ``(c1+c3, c2+c4)`` through Alamouti blocks built from
        ``(h1+h3, h2+h4)``; ``minus`` carries ``(c1-c3, c2-c4)`` through
        ``(h1-h3, h2-h4)``.
    """
    r = np.asarray(r, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    if r.shape[-2] != 4 or h.shape[-2] != 4:
        raise DimensionError("quasi-orthogonal split needs 4 time slots and 4 transmit antennas")
    plus_obs = np.stack([r[..., 0, :] + r[..., 2, :], -np.conj(r[..., 1, :] + r[..., 3, :])], axis=-1)
    minus_obs = np.stack([r[..., 0, :] - r[..., 2, :], -np.conj(r[..., 1, :] - r[..., 3, :])], axis=-1)
    plus_blocks = alamouti_blocks(h[..., :2, :] + h[..., 2:, :])
    minus_blocks = alamouti_blocks(h[..., :2, :] - h[..., 2:, :])
    return BranchSystem(plus_obs, plus_blocks), BranchSystem(minus_obs, minus_blocks)


def qostbc_merge(plus_channel, minus_channel) -> np.ndarray:
    """Undo the sum/difference conversion on channel coefficients.

    ``plus_channel`` and ``minus_channel`` are :class:`AlamoutiBlock` (or the
    ``(a, b)`` first-row pairs) of the two branch channels. Returns the
    ``(..., 4)`` channel vector ``((a+a')/2, (b+b')/2, (a-a')/2, (b-b')/2)``
    of the equivalent single-user quasi-orthogonal system.
    """
    a, b = _block_pair(plus_channel)
    ap, bp = _block_pair(minus_channel)
    return np.stack([(a + ap) / 2, (b + bp) / 2, (a - ap) / 2, (b - bp) / 2], axis=-1)


def _block_pair(blk):
    if isinstance(blk, AlamoutiBlock):
        return np.asarray(blk.a, dtype=np.complex128), np.asarray(blk.b, dtype=np.complex128)
    m = np.asarray(blk, dtype=np.complex128)
    if m.shape[-2:] == (2, 2):
        return m[..., 0, 0], m[..., 0, 1]
    return m[..., 0], m[..., 1]


def qostbc_merge_observations(plus_obs, minus_obs) -> np.ndarray:
    """Rebuild 4 raw-domain samples from conjugated branch observations.

    Inverse of the observation part of :func:`qostbc_split`:
    ``(..., 2)`` plus and minus vectors give ``(..., 4)`` samples
    ``(R1, R2, R3, R4)``.
    """
    p = np.asarray(plus_obs, dtype=np.complex128)
    m = np.asarray(minus_obs, dtype=np.complex128)
    r1 = (p[..., 0] + m[..., 0]) / 2
    r3 = (p[..., 0] - m[..., 0]) / 2
    r2 = -np.conj(p[..., 1] + m[..., 1]) / 2
    r4 = -np.conj(p[..., 1] - m[..., 1]) / 2
    return np.stack([r1, r2, r3, r4], axis=-1)


def qostbc_virtual_channel(h) -> np.ndarray:
    """Linear model of one quasi-orthogonal reception in the conjugated domain.

    For channel ``h`` of shape ``(..., 4)`` returns ``V`` of shape
    ``(..., 4, 4)`` with ``(R1, -R2*, R3, -R4*) = V @ (c1, c2, c3', c4')``
    where ``c3', c4'`` are the rotated symbols actually transmitted.
    """
    h = np.asarray(h, dtype=np.complex128)
    h1, h2, h3, h4 = (h[..., k] for k in range(4))
    hc = np.conj
    rows = [
        [h1, h2, h3, h4],
        [-hc(h2), hc(h1), -hc(h4), hc(h3)],
        [h3, h4, h1, h2],
        [-hc(h4), hc(h3), -hc(h2), hc(h1)],
    ]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)
