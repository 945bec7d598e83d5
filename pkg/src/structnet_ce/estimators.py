"""Classical pilot-based channel estimators: LS, stacked LS, empirical and
genie LMMSE along frequency, and linear grid interpolation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .channel import TapProcess, frequency_correlation
from .numerics import SingularMatrixError, solve_hermitian
from .phy import PilotScheme, ReceivedGrid, Subframe

DIAGONAL_LOADING = 1e-6


@dataclass
class PilotEstimate:
    """Channel estimates at pilot REs.

    ``values[tp, j, r, s]`` is the estimate for stream ``s`` at pilot symbol
    ``symbols[tp]`` and subcarrier ``subcarriers[s, j]``.
    """

    values: np.ndarray
    subcarriers: np.ndarray
    symbols: tuple

    @property
    def num_pilot_subcarriers(self) -> int:
        return self.subcarriers.shape[1]

    def with_values(self, values) -> "PilotEstimate":
        return PilotEstimate(np.asarray(values), self.subcarriers, self.symbols)


@dataclass
class ChannelEstimate:
    H: np.ndarray
    method: str
    pilot: PilotEstimate | None = None
    noise_var: float | None = None
    info: dict = field(default_factory=dict)


@dataclass
class CorrelationModel:
    R: np.ndarray
    provenance: str

    @property
    def size(self) -> int:
        return self.R.shape[0]


def _pilot_slices(received, subframe: Subframe):
    Y = getattr(received, "Y", received)
    ps = list(subframe.pilot_symbols)
    return Y[ps], subframe.X[ps]


def ls_estimate(received, subframe: Subframe) -> PilotEstimate:
    """Per-RE division ``y / x_s`` on each stream's own pilot comb."""
    cfg = subframe.config
    if cfg.pilot_scheme is not PilotScheme.ORTHOGONAL:
        raise ValueError("LS needs orthogonal pilots")
    Yp, Xp = _pilot_slices(received, subframe)
    subs = np.stack([cfg.pilot_subcarriers(s) for s in range(cfg.nt)])
    Tp, nr = Yp.shape[0], Yp.shape[2]
    values = np.empty((Tp, subs.shape[1], nr, cfg.nt), dtype=complex)
    for s in range(cfg.nt):
        x = Xp[:, subs[s], s]
        if np.any(x == 0):
            raise ValueError("zero pilot symbol on a pilot RE")
        values[..., s] = Yp[:, subs[s], :] / x[..., None]
    return PilotEstimate(values, subs, tuple(subframe.pilot_symbols))


def stacked_ls(received, subframe: Subframe, rcond: float = 1e-10) -> np.ndarray:
    """Per-subcarrier least squares over the stacked pilot symbols.

    Solves ``y_t = H x_t`` for every subcarrier, assuming the channel is
    static across the pilot symbols. Returns ``(K, nr, nt)``.
    """
    cfg = subframe.config
    if cfg.pilot_scheme is not PilotScheme.NON_ORTHOGONAL:
        raise ValueError("stacked LS needs non-orthogonal pilots")
    Yp, Xp = _pilot_slices(received, subframe)
    if Xp.shape[0] < cfg.nt:
        raise SingularMatrixError("fewer pilot symbols than streams")
    A = np.transpose(Xp, (1, 0, 2))               # (K, Tp, nt)
    B = np.transpose(Yp, (1, 0, 2))               # (K, Tp, nr)
    Ah = np.conj(np.swapaxes(A, 1, 2))
    G = Ah @ A
    eig = np.linalg.eigvalsh(G)
    if np.any(eig[:, 0] <= rcond * np.maximum(eig[:, -1], 1e-300)):
        raise SingularMatrixError("stacked pilot matrix is rank deficient")
    Ht = np.linalg.solve(G, Ah @ B)               # (K, nt, nr)
    return np.swapaxes(Ht, 1, 2)


def stacked_ls_pilot_estimate(received, subframe: Subframe) -> PilotEstimate:
    """:func:`stacked_ls` repeated at every pilot symbol."""
    cfg = subframe.config
    Hk = stacked_ls(received, subframe)
    Tp = len(subframe.pilot_symbols)
    subs = np.tile(np.arange(cfg.num_subcarriers), (cfg.nt, 1))
    return PilotEstimate(np.broadcast_to(Hk, (Tp,) + Hk.shape).copy(), subs, tuple(subframe.pilot_symbols))


def estimate_noise_var(received, subframe: Subframe) -> float:
    """Mean squared residual of a static per-subcarrier fit on the pilot REs.

    Non-orthogonal pilots use :func:`stacked_ls`; orthogonal pilots fit the
    single active stream on each comb subcarrier. Normalized by the residual
    degrees of freedom, so it is unbiased for a static channel.
    """
    cfg = subframe.config
    Yp, Xp = _pilot_slices(received, subframe)
    Tp, K, nr = Yp.shape
    if cfg.pilot_scheme is PilotScheme.NON_ORTHOGONAL:
        Hk = stacked_ls(received, subframe)
        resid = Yp - np.einsum("krc,tkc->tkr", Hk, Xp)
        dof = K * nr * (Tp - cfg.nt)
    else:
        active = np.arange(K) % cfg.nt
        x = Xp[:, np.arange(K), active]                              # (Tp, K)
        h = np.sum(np.conj(x)[..., None] * Yp, axis=0) / np.sum(np.abs(x) ** 2, axis=0)[:, None]
        resid = Yp - x[..., None] * h[None]
        dof = K * nr * (Tp - 1)
    if dof <= 0:
        raise ValueError("not enough pilot symbols to estimate the noise variance")
    return float(np.sum(np.abs(resid) ** 2) / dof)


def _interp_axis(values, axis, x_known, x_new):
    """Linear interpolation with constant hold outside ``x_known``."""
    x_known = np.asarray(x_known, dtype=float)
    x_new = np.asarray(x_new, dtype=float)
    v = np.moveaxis(values, axis, 0)
    if x_known.size == 1:
        out = np.broadcast_to(v[:1], (x_new.size,) + v.shape[1:]).copy()
        return np.moveaxis(out, 0, axis)
    hi = np.clip(np.searchsorted(x_known, x_new, side="right"), 1, x_known.size - 1)
    lo = hi - 1
    w = (x_new - x_known[lo]) / (x_known[hi] - x_known[lo])
    w = np.clip(w, 0.0, 1.0).reshape((-1,) + (1,) * (v.ndim - 1))
    out = (1.0 - w) * v[lo] + w * v[hi]
    return np.moveaxis(out, 0, axis)


def interpolate_grid(pilot: PilotEstimate, num_symbols: int, num_subcarriers: int) -> np.ndarray:
    """Frequency-then-time linear interpolation to a ``(T, K, nr, nt)`` grid."""
    Tp, _, nr, nt = pilot.values.shape
    if pilot.num_pilot_subcarriers < 2 or Tp < 2:
        raise ValueError("need at least two pilot subcarriers and two pilot symbols")
    full_k = np.empty((Tp, num_subcarriers, nr, nt), dtype=complex)
    for s in range(nt):
        full_k[..., s] = _interp_axis(pilot.values[..., s], 1, pilot.subcarriers[s], np.arange(num_subcarriers))
    return _interp_axis(full_k, 0, pilot.symbols, np.arange(num_symbols))


def _snapshots(pilot) -> np.ndarray:
    """Frequency snapshots ``(N, Kp)``, one per (pilot symbol, rx, tx)."""
    v = pilot.values if isinstance(pilot, PilotEstimate) else np.asarray(pilot)
    return np.transpose(v, (0, 2, 3, 1)).reshape(-1, v.shape[1])


def empirical_corr(history, window: int | None = None, loading: float = DIAGONAL_LOADING) -> CorrelationModel:
    """Sample frequency correlation of LS pilot estimates over the last ``window`` entries."""
    items = list(history)
    if not items:
        raise ValueError("empty estimate history")
    if window is not None:
        if window < 1:
            raise ValueError("window must be >= 1")
        items = items[-window:]
    V = np.concatenate([_snapshots(p) for p in items], axis=0)
    R = V.T @ V.conj() / V.shape[0]
    R = 0.5 * (R + R.conj().T)
    R[np.diag_indices_from(R)] += loading
    return CorrelationModel(R, "empirical")


def genie_corr(taps: TapProcess, subcarriers, spacing_hz: float) -> CorrelationModel:
    """Exact frequency correlation of the tapped delay line on ``subcarriers``."""
    R = frequency_correlation(taps, np.asarray(subcarriers), spacing_hz)
    return CorrelationModel(0.5 * (R + R.conj().T), "genie")


def lmmse_filter(pilot: PilotEstimate, corr: CorrelationModel, noise_var: float, pilot_power: float = 1.0) -> PilotEstimate:
    """``R (R + s2/rho I)^{-1} h_ls`` along frequency for every (symbol, rx, tx)."""
    Tp, Kp, nr, nt = pilot.values.shape
    if corr.size != Kp:
        raise ValueError(f"correlation is {corr.size}x{corr.size}, pilots span {Kp} subcarriers")
    if noise_var == 0:
        return pilot.with_values(pilot.values.copy())
    V = _snapshots(pilot).T                                   # (Kp, N)
    A = corr.R + (noise_var / pilot_power) * np.eye(Kp)
    F = corr.R @ solve_hermitian(0.5 * (A + A.conj().T), V)
    out = F.T.reshape(Tp, nr, nt, Kp).transpose(0, 3, 1, 2)
    return pilot.with_values(out)


class EmpiricalLmmse:
    """Empirical LMMSE with a sliding history of LS pilot estimates.

    One instance belongs to one simulation trial.
    """

    def __init__(self, window: int = 10):
        self.window = window
        self.history: deque = deque(maxlen=window)

    def observe(self, received, subframe: Subframe) -> PilotEstimate:
        ls = ls_estimate(received, subframe)
        self.history.append(ls)
        return ls

    def estimate(self, received, subframe: Subframe) -> ChannelEstimate:
        ls = self.observe(received, subframe)
        corr = empirical_corr(self.history, self.window)
        s2 = estimate_noise_var(received, subframe)
        filt = lmmse_filter(ls, corr, s2)
        cfg = subframe.config
        H = interpolate_grid(filt, cfg.num_symbols, cfg.num_subcarriers)
        return ChannelEstimate(H, "em-lmmse", filt, s2)


def ls_channel(received, subframe: Subframe) -> ChannelEstimate:
    ls = ls_estimate(received, subframe)
    cfg = subframe.config
    return ChannelEstimate(interpolate_grid(ls, cfg.num_symbols, cfg.num_subcarriers), "ls", ls)


def genie_lmmse_channel(received, subframe: Subframe, taps: TapProcess, spacing_hz: float, noise_var: float) -> ChannelEstimate:
    ls = ls_estimate(received, subframe)
    corr = genie_corr(taps, ls.subcarriers[0], spacing_hz)
    filt = lmmse_filter(ls, corr, noise_var)
    cfg = subframe.config
    return ChannelEstimate(interpolate_grid(filt, cfg.num_symbols, cfg.num_subcarriers), "genie-lmmse", filt, noise_var)


def stacked_ls_channel(received, subframe: Subframe) -> ChannelEstimate:
    pilot = stacked_ls_pilot_estimate(received, subframe)
    cfg = subframe.config
    H = interpolate_grid(pilot, cfg.num_symbols, cfg.num_subcarriers)
    return ChannelEstimate(H, "stacked-ls", pilot)


def pilot_mask_for(pilot: PilotEstimate, num_symbols: int, num_subcarriers: int) -> np.ndarray:
    """Boolean ``(T, K, nt)`` mask of the REs an estimate observed directly."""
    nt = pilot.values.shape[3]
    mask = np.zeros((num_symbols, num_subcarriers, nt), dtype=bool)
    for s in range(nt):
        mask[np.ix_(list(pilot.symbols), pilot.subcarriers[s], [s])] = True
    return mask
