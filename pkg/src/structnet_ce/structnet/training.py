"""Per-subframe training, channel extraction and data detection."""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass

import numpy as np

from ..estimators import ChannelEstimate, PilotEstimate, interpolate_grid, stacked_ls
from ..numerics import as_stream
from ..phy import PilotScheme, Subframe, detect_bits_mmse
from . import _reference, backend
from .model import (
    DegenerateWeightsError,
    StructNetParams,
    TrainConfig,
    TrainingFailed,
    TrainingSet,
    UnsupportedMode,
    build_training_set,
    classifier_forward,
    new_params,
)

# Multiplies the channel-layer gradient returned by loss_and_gradients.
# Only the self-test's negative control changes it.
_gradient_fault = 1.0


@contextlib.contextmanager
def gradient_fault(scale: float):
    """Temporarily scale the analytic channel-layer gradient (fault injection)."""
    global _gradient_fault
    old = _gradient_fault
    _gradient_fault = float(scale)
    try:
        yield
    finally:
        _gradient_fault = old


@dataclass
class TrainStats:
    epochs: int
    final_loss: float
    wall_ms: float
    fallback: bool = False
    restarts: int = 0
    backend: str = ""


@dataclass
class EpochOptions:
    a: float
    batch_size: int
    lr_classifier: float
    lr_channel: float
    beta1: float
    beta2: float
    adam_eps: float
    adam_eps_channel: float
    smoothness: float
    update_w: bool


@dataclass
class AdamState:
    W: np.ndarray
    theta: np.ndarray
    shape: object
    m_w: np.ndarray
    v_w: np.ndarray
    m_theta: np.ndarray
    v_theta: np.ndarray
    step_w: int = 0
    step_theta: int = 0

    @classmethod
    def fresh(cls, params: StructNetParams) -> "AdamState":
        nw = params.W.size * 2
        nt = params.theta.size
        return cls(params.W, params.theta, params.shape, np.zeros(nw), np.zeros(nw), np.zeros(nt), np.zeros(nt))


def training_arrays(ts: TrainingSet) -> dict:
    """Contiguous typed columns shared by both backends."""
    return {
        "t": np.ascontiguousarray(ts.t, dtype=np.int64),
        "k": np.ascontiguousarray(ts.k, dtype=np.int64),
        "stream": np.ascontiguousarray(ts.stream, dtype=np.int64),
        "dim": np.ascontiguousarray(ts.dim, dtype=np.int64),
        "label": np.ascontiguousarray(ts.label, dtype=np.float64),
        "Yp": np.ascontiguousarray(ts.Yp, dtype=np.complex128),
        "Xp": np.ascontiguousarray(ts.Xp, dtype=np.complex128),
    }


def loss_and_gradients(batch: TrainingSet, params: StructNetParams, smoothness: float = 0.0):
    """Mean BCE plus smoothness penalty and its gradients.

    Returns ``(loss, gW, gtheta)`` with ``gW = dL/dRe W + j dL/dIm W``.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    data = training_arrays(batch)
    idx = np.arange(len(batch))
    loss, gW, gth, _ = _reference.loss_and_grad(params.W, params.theta, params.shape, data, idx,
                                             params.amplitude, smoothness)
    return loss, gW * _gradient_fault, gth


def loss_value(batch: TrainingSet, params: StructNetParams, smoothness: float = 0.0) -> float:
    data = training_arrays(batch)
    idx = np.arange(len(batch))
    logit = _reference.logits(params.W, params.theta, params.shape, data, idx, params.amplitude)
    bce = np.logaddexp(0.0, -data["label"] * logit).mean()
    pen, _ = _reference.smoothness_penalty(params.W, smoothness)
    return float(bce + pen)


def _initial_params(subframe, received, cfg: TrainConfig, rng, attempt: int) -> StructNetParams:
    sc = subframe.config
    K = sc.num_subcarriers
    nr = getattr(received, "Y", received).shape[-1]
    if cfg.init == "stacked_ls":
        W = stacked_ls(received, subframe)
        if attempt > 0:
            # restart: perturb so the same degenerate trajectory is not replayed
            W = W + rng.child(1).complex_normal(W.shape, cfg.init_std ** 2)
    else:
        W = rng.child(1).complex_normal((K, nr, sc.nt), cfg.init_std ** 2)
    return new_params(W, cfg.hidden, sc.modulation, rng.child(2), np.arange(K))


def train_subframe(received, subframe: Subframe, cfg: TrainConfig | None = None, rng=0,
                   backend_name: str | None = None):
    """Train on the pilot REs of one subframe.

    Returns ``(params, stats)``. Deterministic given ``rng``. Raises
    :class:`TrainingFailed` (with ``.stats``) when every restart ends in
    degenerate weights.
    """
    cfg = cfg or TrainConfig()
    rng = as_stream(rng)
    if subframe.config.pilot_scheme is not PilotScheme.NON_ORTHOGONAL:
        raise ValueError("StructNet-CE trains on non-orthogonal pilots only")
    impl = backend.get(backend_name)
    t0 = time.perf_counter()
    data = training_arrays(build_training_set(subframe, received))
    n = data["t"].size
    a = subframe.config.modulation.amplitude
    for attempt in range(cfg.max_restarts + 1):
        arng = rng.child(attempt)
        params = _initial_params(subframe, received, cfg, arng, attempt)
        state = AdamState.fresh(params)
        shuffle = arng.child(3)
        loss = float("nan")
        epochs = 0
        try:
            for epoch in range(cfg.epochs):
                opts = EpochOptions(a, cfg.batch_size, cfg.lr_classifier, cfg.lr_channel, cfg.beta1,
                                    cfg.beta2, cfg.adam_eps, cfg.adam_eps_channel, cfg.smoothness,
                                    epoch >= cfg.warmup_epochs)
                loss, bce = impl.run_epoch(state, data, shuffle.permutation(n).astype(np.int64), opts)
                epochs = epoch + 1
                if not np.isfinite(loss):
                    raise DegenerateWeightsError("loss diverged")
                # the penalty of the true channel is not zero, so only the data term is compared
                if cfg.target_loss > 0 and bce <= cfg.target_loss:
                    break
        except DegenerateWeightsError:
            continue
        wall = (time.perf_counter() - t0) * 1e3
        return params, TrainStats(epochs, float(loss), wall, False, attempt, impl.NAME)
    wall = (time.perf_counter() - t0) * 1e3
    err = TrainingFailed(f"degenerate weights after {cfg.max_restarts} restarts")
    err.stats = TrainStats(0, float("nan"), wall, True, cfg.max_restarts, impl.NAME)
    raise err


def extract_channel(params: StructNetParams, subframe: Subframe) -> ChannelEstimate:
    """Channel-layer weights reused at each pilot symbol, then interpolated to the grid."""
    sc = subframe.config
    Tp = len(sc.pilot_symbols)
    subs = params.subcarriers if params.subcarriers is not None else np.arange(params.W.shape[0])
    values = np.broadcast_to(params.W, (Tp,) + params.W.shape).copy()
    pilot = PilotEstimate(values, np.tile(subs, (params.nt, 1)), tuple(sc.pilot_symbols))
    H = interpolate_grid(pilot, sc.num_symbols, sc.num_subcarriers)
    return ChannelEstimate(H, "structnet-ce", pilot)


def classifier_bits(received, subframe: Subframe, params: StructNetParams, H_est) -> np.ndarray:
    """Per-dimension sign decisions from the shared classifier (QPSK only).

    For target stream ``i`` and dimension ``d`` the observation is rotated
    like a training sample, the own orthogonal dimension is folded to the
    origin with the odd lattice of step ``2a``, interferers are folded as in
    training, and the logit sign is the bit.
    """
    sc = subframe.config
    if sc.modulation.order != 4:
        raise UnsupportedMode("classifier detection path supports QPSK only")
    a = params.amplitude
    Y = getattr(received, "Y", received)
    ds = list(sc.data_symbols)
    y = Y[ds].reshape(-1, Y.shape[-1])
    Hd = H_est[ds].reshape(-1, *H_est.shape[-2:])
    N, nt = y.shape[0], Hd.shape[-1]
    out = np.empty((N, nt, 2), dtype=np.int8)
    for i in range(nt):
        ii = np.full(N, i)
        for d, rot in enumerate((1.0, -1j)):
            r = rot * y
            c, _ = _reference.zf_coordinates(r, Hd)
            q = c[:, i].imag
            odd = a * (2 * np.floor(q / (2 * a)) + 1)
            r = r - Hd[:, :, i] * (1j * odd)[:, None]
            z, _ = _reference.fold_batch(r, Hd, ii, a)
            _, _, feats = _reference.zf_features(z, Hd, ii, a)
            logit, _ = classifier_forward(params.theta, params.shape, feats)
            out[:, i, d] = np.where(logit >= 0, 1, -1)
    T = len(ds)
    return out.reshape(T, sc.num_subcarriers, nt, 2, 1)


def detect_data(received, subframe: Subframe, params: StructNetParams, noise_var: float,
                path: str = "mmse", H_est=None) -> np.ndarray:
    """Data bits ``(T_data, K, nt, 2, m)`` via MMSE equalization or the classifier."""
    if H_est is None:
        H_est = extract_channel(params, subframe).H
    if path == "mmse":
        return detect_bits_mmse(received, subframe, H_est, noise_var)
    if path == "classifier":
        return classifier_bits(received, subframe, params, H_est)
    raise ValueError(f"unknown detection path {path!r}")


__all__ = [
    "AdamState", "EpochOptions", "TrainStats", "classifier_bits", "detect_data", "extract_channel",
    "gradient_fault", "loss_and_gradients", "loss_value", "train_subframe", "training_arrays",
]
