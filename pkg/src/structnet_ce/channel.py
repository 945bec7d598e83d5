"""Tapped-delay-line Rayleigh fading with Clarke/Jakes Doppler.

Each (rx, tx, tap) coefficient is a sum of ``num_sinusoids`` complex
exponentials with random arrival angles and phases::

    g(t) = sqrt(P / Ns) * sum_n exp(j (2 pi f_D cos(alpha_n) t + phi_n))

which has ensemble autocorrelation ``P * J0(2 pi f_D tau)``. The grid is
sampled once per OFDM symbol and applied in the frequency domain:
``H[t, k] = sum_p g_p(t * Ts) exp(-j 2 pi k df tau_p)``.

Defaults (3.5 GHz carrier, 15 kHz spacing, 100 ns RMS delay spread, 8 taps,
32 sinusoids) are modelling choices, not measured scenario parameters.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import RngStream, as_stream

SPEED_OF_LIGHT = 299_792_458.0


def kmh_to_mps(kmh: float) -> float:
    return kmh / 3.6


def doppler_hz(speed_mps: float, carrier_hz: float) -> float:
    """Maximum Doppler shift ``v * f_c / c``."""
    return speed_mps * carrier_hz / SPEED_OF_LIGHT


@dataclass(frozen=True)
class ChannelConfig:
    nt: int = 2
    nr: int = 2
    num_taps: int = 8
    delay_spread_s: float = 100e-9
    carrier_hz: float = 3.5e9
    speed_mps: float = kmh_to_mps(5.0)
    subcarrier_spacing_hz: float = 15e3
    num_subcarriers: int = 1024
    symbols_per_subframe: int = 14
    symbol_duration_s: float | None = None
    num_sinusoids: int = 32
    # last tap sits at max_delay_factor * delay_spread_s
    max_delay_factor: float = 3.0

    def __post_init__(self):
        if not (1 <= self.nt <= 8 and 1 <= self.nr <= 8):
            raise ValueError("nt and nr must lie in 1..8")
        if self.num_taps < 1 or self.num_sinusoids < 1:
            raise ValueError("num_taps and num_sinusoids must be >= 1")
        for name in ("delay_spread_s", "carrier_hz", "subcarrier_spacing_hz", "max_delay_factor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.speed_mps < 0:
            raise ValueError("speed_mps must be non-negative")
        if self.num_subcarriers < 1 or self.symbols_per_subframe < 1:
            raise ValueError("grid dimensions must be positive")
        if self.symbol_duration_s is None:
            object.__setattr__(self, "symbol_duration_s", 1.0 / self.subcarrier_spacing_hz)
        elif self.symbol_duration_s <= 0:
            raise ValueError("symbol_duration_s must be positive")

    @property
    def doppler_hz(self) -> float:
        return doppler_hz(self.speed_mps, self.carrier_hz)

    @property
    def subframe_duration_s(self) -> float:
        return self.symbols_per_subframe * self.symbol_duration_s

    def with_(self, **changes) -> "ChannelConfig":
        return replace(self, **changes)


def exponential_pdp(cfg: ChannelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Uniformly spaced delays with powers ``exp(-tau/delay_spread)``, summing to one."""
    if cfg.num_taps == 1:
        return np.zeros(1), np.ones(1)
    delays = np.linspace(0.0, cfg.max_delay_factor * cfg.delay_spread_s, cfg.num_taps)
    powers = np.exp(-delays / cfg.delay_spread_s)
    return delays, powers / powers.sum()


@dataclass
class TapProcess:
    """Sum-of-sinusoids parameters for every (rx, tx, tap).

    ``angles`` and ``phases`` have shape ``(nr, nt, num_taps, num_sinusoids)``.
    """

    delays: np.ndarray
    powers: np.ndarray
    angles: np.ndarray
    phases: np.ndarray
    doppler_hz: float

    @property
    def num_taps(self) -> int:
        return self.delays.size

    def gains(self, times: np.ndarray) -> np.ndarray:
        """Tap gains at the given times, shape ``(len(times), nr, nt, taps)``."""
        times = np.asarray(times, dtype=float)
        ns = self.angles.shape[-1]
        arg = (2 * np.pi * self.doppler_hz * np.cos(self.angles))[None] * times[:, None, None, None, None]
        arg = arg + self.phases[None]
        amp = np.sqrt(self.powers / ns)
        return np.exp(1j * arg).sum(axis=-1) * amp

    def frequency_response(self, subcarriers: np.ndarray, spacing_hz: float) -> np.ndarray:
        """``exp(-j 2 pi k df tau_p)``, shape ``(len(subcarriers), taps)``."""
        k = np.asarray(subcarriers, dtype=float)
        return np.exp(-2j * np.pi * np.outer(k * spacing_hz, self.delays))


def generate_taps(cfg: ChannelConfig, rng) -> TapProcess:
    rng = as_stream(rng)
    delays, powers = exponential_pdp(cfg)
    shape = (cfg.nr, cfg.nt, cfg.num_taps, cfg.num_sinusoids)
    angles = rng.uniform(-np.pi, np.pi, shape)
    phases = rng.uniform(-np.pi, np.pi, shape)
    return TapProcess(delays, powers, angles, phases, cfg.doppler_hz)


@dataclass
class ChannelRealization:
    """Ground-truth grid ``H`` of shape ``(T, K, nr, nt)``."""

    H: np.ndarray
    config: ChannelConfig
    seed: int | None = None
    start_time_s: float = 0.0
    taps: TapProcess | None = field(default=None, repr=False)

    @property
    def shape(self):
        return self.H.shape


def realize(taps: TapProcess, cfg: ChannelConfig, start_time_s: float = 0.0, seed=None) -> ChannelRealization:
    """Sample the tap processes once per OFDM symbol and map to subcarriers.

    ``start_time_s`` offsets the subframe within the process so consecutive
    subframes of one realization can be drawn.
    """
    times = start_time_s + np.arange(cfg.symbols_per_subframe) * cfg.symbol_duration_s
    g = taps.gains(times)                                   # (T, nr, nt, P)
    f = taps.frequency_response(np.arange(cfg.num_subcarriers), cfg.subcarrier_spacing_hz)  # (K, P)
    H = np.einsum("trcp,kp->tkrc", g, f, optimize=True)
    return ChannelRealization(H, cfg, seed, start_time_s, taps)


def generate(cfg: ChannelConfig, seed: int, stream_id: int = 0, start_time_s: float = 0.0) -> ChannelRealization:
    """Convenience: draw taps from ``RngStream(seed, stream_id)`` and realize them."""
    taps = generate_taps(cfg, RngStream(seed, stream_id))
    return realize(taps, cfg, start_time_s, seed)


def frequency_correlation(taps: TapProcess, subcarriers: np.ndarray, spacing_hz: float) -> np.ndarray:
    """Closed form ``R[k, k'] = sum_p P_p exp(-j 2 pi (k - k') df tau_p)``."""
    f = taps.frequency_response(subcarriers, spacing_hz) * np.sqrt(taps.powers)
    return f @ f.conj().T


GRID_HEADER = ("t", "k", "rx", "tx", "re", "im")


def export_grid_csv(realization: ChannelRealization, path) -> None:
    """Write the grid as CSV rows ``t,k,rx,tx,re,im`` (floats in repr form)."""
    H = realization.H
    T, K, nr, nt = H.shape
    t, k, r, c = np.meshgrid(np.arange(T), np.arange(K), np.arange(nr), np.arange(nt), indexing="ij")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GRID_HEADER)
        for row in zip(t.ravel(), k.ravel(), r.ravel(), c.ravel(), H.real.ravel(), H.imag.ravel()):
            writer.writerow((int(row[0]), int(row[1]), int(row[2]), int(row[3]), repr(float(row[4])), repr(float(row[5]))))


def load_grid_csv(path) -> np.ndarray:
    """Inverse of :func:`export_grid_csv`; returns the ``(T, K, nr, nt)`` grid."""
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    data = np.atleast_2d(data)
    idx = data[:, :4].astype(int)
    shape = tuple(idx.max(axis=0) + 1)
    H = np.zeros(shape, dtype=complex)
    H[idx[:, 0], idx[:, 1], idx[:, 2], idx[:, 3]] = data[:, 4] + 1j * data[:, 5]
    return H
