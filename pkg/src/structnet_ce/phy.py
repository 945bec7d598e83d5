"""QAM mapping, subframe construction, AWGN transmission, MMSE equalization
and link metrics.

Bits are carried as ``+1/-1`` values. A symbol of order ``M = 4**m`` has ``m``
bits per real dimension, weighted ``a * 2**(m-1-l)`` for level ``l``, so each
level is a sign decision after subtracting the levels above it.

Grid layout used throughout the package:

* channel ``H``: ``(T, K, nr, nt)``
* transmitted ``X``: ``(T, K, nt)``
* received ``Y``: ``(T, K, nr)``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .numerics import as_stream

QPSK_AMPLITUDE = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class ModulationScheme:
    order: int = 4

    def __post_init__(self):
        if self.order not in (4, 16):
            raise ValueError(f"unsupported modulation order {self.order}")

    @property
    def bits_per_dim(self) -> int:
        return int(round(math.log2(math.sqrt(self.order))))

    @property
    def amplitude(self) -> float:
        """Base amplitude ``a``: ``1/sqrt(2)`` for QPSK, ``1/sqrt(10)`` for 16-QAM."""
        return math.sqrt(3.0 / (2.0 * (self.order - 1)))

    @property
    def weights(self) -> np.ndarray:
        m = self.bits_per_dim
        return self.amplitude * 2.0 ** (m - 1 - np.arange(m))

    @property
    def levels(self) -> np.ndarray:
        """Per-dimension amplitude levels in ascending order."""
        m = self.bits_per_dim
        a = self.amplitude
        return a * np.arange(-(2**m) + 1, 2**m, 2, dtype=float)

    def constellation(self) -> np.ndarray:
        lv = self.levels
        return (lv[:, None] + 1j * lv[None, :]).ravel()


def _check_bits(bits, m):
    bits = np.asarray(bits)
    if bits.shape[-1] != m:
        raise ValueError(f"expected {m} bits per dimension, got {bits.shape[-1]}")
    if not np.all(np.abs(bits) == 1):
        raise ValueError("bits must be +1 or -1")
    return bits


def map_level(bits, scheme: ModulationScheme) -> np.ndarray:
    """Per-dimension value ``sum_l a 2**(m-1-l) b_l``; ``bits[..., l]``."""
    bits = _check_bits(bits, scheme.bits_per_dim)
    return bits @ scheme.weights


def map_bits(bits_re, bits_im, scheme: ModulationScheme):
    """Map real/imag bit vectors (last axis = bit level) to complex symbols."""
    out = map_level(bits_re, scheme) + 1j * map_level(bits_im, scheme)
    return complex(out) if np.ndim(out) == 0 else out


def decompose_level(v, scheme: ModulationScheme, tol: float = 1e-9) -> np.ndarray:
    """Successive sign rule; inverse of :func:`map_level`."""
    v = np.asarray(v, dtype=float)
    res = v.copy()
    bits = np.empty(v.shape + (scheme.bits_per_dim,), dtype=np.int8)
    for l, w in enumerate(scheme.weights):
        b = np.where(res >= 0, 1, -1).astype(np.int8)
        bits[..., l] = b
        res = res - w * b
    if np.any(np.abs(res) > tol):
        raise ValueError("value is not on the constellation")
    return bits


def bit_decompose(symbol, scheme: ModulationScheme):
    """Return ``(bits_re, bits_im)`` for constellation symbols."""
    s = np.asarray(symbol, dtype=complex)
    return decompose_level(s.real, scheme), decompose_level(s.imag, scheme)


def hard_bits(v, scheme: ModulationScheme) -> np.ndarray:
    """Slice noisy per-dimension values to the nearest level and return its bits."""
    lv = scheme.levels
    v = np.asarray(v, dtype=float)
    idx = np.clip(np.rint((v - lv[0]) / (lv[1] - lv[0])), 0, lv.size - 1).astype(int)
    return decompose_level(lv[idx], scheme)


def demap_hard(symbols, scheme: ModulationScheme) -> np.ndarray:
    """Hard decisions for complex soft symbols, shape ``(..., 2, m)`` (re, im)."""
    s = np.asarray(symbols, dtype=complex)
    return np.stack([hard_bits(s.real, scheme), hard_bits(s.imag, scheme)], axis=-2)


def random_bits(rng, shape, m: int) -> np.ndarray:
    rng = as_stream(rng)
    return (2 * rng.integers(0, 2, size=tuple(shape) + (2, m)) - 1).astype(np.int8)


def bits_to_symbols(bits, scheme: ModulationScheme) -> np.ndarray:
    """Bits of shape ``(..., 2, m)`` to complex symbols."""
    return map_level(bits[..., 0, :], scheme) + 1j * map_level(bits[..., 1, :], scheme)


class PilotScheme(str, Enum):
    ORTHOGONAL = "orthogonal"
    NON_ORTHOGONAL = "non_orthogonal"


DEFAULT_PILOT_SYMBOLS = (2, 5, 8, 11)


@dataclass(frozen=True)
class SubframeConfig:
    num_subcarriers: int = 1024
    num_symbols: int = 14
    pilot_symbols: tuple = DEFAULT_PILOT_SYMBOLS
    pilot_scheme: PilotScheme = PilotScheme.NON_ORTHOGONAL
    modulation: ModulationScheme = field(default_factory=ModulationScheme)
    nt: int = 2

    def __post_init__(self):
        object.__setattr__(self, "pilot_scheme", PilotScheme(self.pilot_scheme))
        ps = tuple(sorted(int(t) for t in self.pilot_symbols))
        if len(set(ps)) != len(ps) or not ps:
            raise ValueError("pilot symbol positions must be distinct and non-empty")
        if ps[0] < 0 or ps[-1] >= self.num_symbols:
            raise ValueError("pilot symbol position outside the subframe")
        if self.nt < 1 or self.num_subcarriers < self.nt:
            raise ValueError("need at least nt subcarriers")
        object.__setattr__(self, "pilot_symbols", ps)

    @property
    def data_symbols(self) -> tuple:
        return tuple(t for t in range(self.num_symbols) if t not in self.pilot_symbols)

    def pilot_subcarriers(self, stream: int) -> np.ndarray:
        """Subcarriers on which ``stream`` sends pilots."""
        K = self.num_subcarriers
        if self.pilot_scheme is PilotScheme.ORTHOGONAL:
            return np.arange(stream, K, self.nt)
        return np.arange(K)

    def with_scheme(self, scheme) -> "SubframeConfig":
        from dataclasses import replace

        return replace(self, pilot_scheme=PilotScheme(scheme))


@dataclass
class Subframe:
    """Transmitted grid plus bookkeeping.

    ``X``: ``(T, K, nt)``; ``pilot_mask``: ``(T, K, nt)`` true where the stream
    carries a pilot (silent REs of an orthogonal pattern are also masked but
    hold zero); ``bits``: data bits ``(T_data, K, nt, 2, m)``.
    """

    config: SubframeConfig
    X: np.ndarray
    pilot_mask: np.ndarray
    bits: np.ndarray

    @property
    def pilot_symbols(self) -> tuple:
        return self.config.pilot_symbols

    @property
    def data_symbols(self) -> tuple:
        return self.config.data_symbols

    @property
    def pilots(self) -> np.ndarray:
        """Pilot-symbol slice of ``X``, shape ``(Tp, K, nt)``."""
        return self.X[list(self.pilot_symbols)]


def qpsk_pilots(rng, shape) -> np.ndarray:
    bits = random_bits(rng, shape, 1)
    return bits_to_symbols(bits, ModulationScheme(4))


def _full_rank_pilots(rng, Tp, K, nt, scheme, max_rounds: int = 64) -> np.ndarray:
    """Random pilots, redrawn on subcarriers where the ``Tp x nt`` stack is rank deficient."""
    pil = bits_to_symbols(random_bits(rng, (Tp, K, nt), scheme.bits_per_dim), scheme)
    if Tp < nt:
        return pil
    for _ in range(max_rounds):
        A = np.transpose(pil, (1, 0, 2))
        eig = np.linalg.eigvalsh(np.conj(np.swapaxes(A, 1, 2)) @ A)
        bad = np.flatnonzero(eig[:, 0] < 1e-6 * eig[:, -1])
        if bad.size == 0:
            break
        fresh = random_bits(rng, (Tp, bad.size, nt), scheme.bits_per_dim)
        pil[:, bad, :] = bits_to_symbols(fresh, scheme)
    return pil


def build_subframe(cfg: SubframeConfig, payload_rng, pilot_rng) -> Subframe:
    """Fill pilots per scheme and data REs with uniform random symbols.

    Orthogonal pilots are unit-power QPSK on a frequency comb (stream ``s`` on
    ``k % nt == s``). Non-orthogonal pilots put every stream on every
    subcarrier of a pilot symbol; they are drawn from the data constellation
    so that every bit level of it appears in the pilots (for QPSK this is the
    same unit-magnitude QPSK set).
    """
    payload_rng = as_stream(payload_rng, 1)
    pilot_rng = as_stream(pilot_rng, 2)
    T, K, nt = cfg.num_symbols, cfg.num_subcarriers, cfg.nt
    scheme = cfg.modulation
    X = np.zeros((T, K, nt), dtype=complex)
    mask = np.zeros((T, K, nt), dtype=bool)
    ps = list(cfg.pilot_symbols)
    Tp = len(ps)

    if cfg.pilot_scheme is PilotScheme.ORTHOGONAL:
        pil = qpsk_pilots(pilot_rng, (Tp, K))
        comb = (np.arange(K)[:, None] % nt) == np.arange(nt)[None, :]      # (K, nt)
        X[ps] = np.where(comb[None], pil[:, :, None], 0.0)
    else:
        X[ps] = _full_rank_pilots(pilot_rng, Tp, K, nt, scheme)
    mask[ps] = True

    ds = list(cfg.data_symbols)
    bits = random_bits(payload_rng, (len(ds), K, nt), scheme.bits_per_dim)
    X[ds] = bits_to_symbols(bits, scheme)
    return Subframe(cfg, X, mask, bits)


def noise_var_from_snr(snr_db: float, nt: int = 1) -> float:
    """Noise variance per receive antenna for a received-SNR target.

    With a unit-gain channel and unit-power symbols the received signal power
    per antenna is ``nt``.
    """
    return nt * 10.0 ** (-snr_db / 10.0)


@dataclass
class ReceivedGrid:
    Y: np.ndarray
    noise_var: float


def apply_channel(H, X) -> np.ndarray:
    return np.einsum("tkrc,tkc->tkr", H, X)


def transmit(subframe: Subframe, realization, snr_db, noise_rng, noise_var: float | None = None) -> ReceivedGrid:
    """``Y = H X + n`` with circularly-symmetric Gaussian noise.

    ``snr_db=None`` with ``noise_var=None`` gives a noiseless grid.
    """
    H = getattr(realization, "H", realization)
    if H.shape[:2] != subframe.X.shape[:2] or H.shape[3] != subframe.X.shape[2]:
        raise ValueError("channel and subframe dimensions disagree")
    if noise_var is None:
        noise_var = 0.0 if snr_db is None else noise_var_from_snr(snr_db, subframe.config.nt)
    Y = apply_channel(H, subframe.X)
    if noise_var > 0:
        Y = Y + as_stream(noise_rng, 3).complex_normal(Y.shape, noise_var)
    return ReceivedGrid(Y, float(noise_var))


def mmse_equalize(Y, H_est, noise_var: float) -> np.ndarray:
    """Per-RE ``(H^H H + s2 I)^{-1} H^H y``.

    ``Y``: ``(..., nr)``, ``H_est``: ``(..., nr, nt)``. At ``noise_var == 0``
    this is zero forcing and a singular ``H^H H`` raises ``LinAlgError``.
    """
    Y = np.asarray(Y, dtype=complex)
    H_est = np.asarray(H_est, dtype=complex)
    Hh = np.conj(np.swapaxes(H_est, -1, -2))
    nt = H_est.shape[-1]
    G = Hh @ H_est + noise_var * np.eye(nt)
    rhs = (Hh @ Y[..., None])
    return np.linalg.solve(G, rhs)[..., 0]


NMSE_FLOOR_DB = -400.0


def nmse_db(H_est, H_true) -> float:
    """``10 log10(sum |H_est - H|^2 / sum |H|^2)``; exact match gives ``NMSE_FLOOR_DB``."""
    H_est = np.asarray(H_est)
    H_true = np.asarray(H_true)
    if H_est.shape != H_true.shape:
        raise ValueError(f"shape mismatch {H_est.shape} vs {H_true.shape}")
    den = np.sum(np.abs(H_true) ** 2)
    if den == 0:
        raise ValueError("reference channel has zero energy")
    num = np.sum(np.abs(H_est - H_true) ** 2)
    if num == 0:
        return NMSE_FLOOR_DB
    return max(float(10 * np.log10(num / den)), NMSE_FLOOR_DB)


def ber(tx_bits, rx_bits) -> float:
    tx_bits = np.asarray(tx_bits)
    rx_bits = np.asarray(rx_bits)
    if tx_bits.shape != rx_bits.shape:
        raise ValueError("bit arrays differ in shape")
    if tx_bits.size == 0:
        return 0.0
    return float(np.mean(tx_bits != rx_bits))


def detect_bits_mmse(received: ReceivedGrid, subframe: Subframe, H_est, noise_var: float | None = None) -> np.ndarray:
    """Equalize all data REs with ``H_est`` and hard-demap; shape matches ``subframe.bits``."""
    ds = list(subframe.data_symbols)
    s2 = received.noise_var if noise_var is None else noise_var
    xhat = mmse_equalize(received.Y[ds], H_est[ds], s2)
    return demap_hard(xhat, subframe.config.modulation)
