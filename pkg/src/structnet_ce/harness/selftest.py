"""Built-in invariant suites: fold invariance, gradients, LMMSE oracle, channel statistics.

Each suite takes its problem size as arguments so the acceptance tests can
run it at full scale while ``structnet-ce selftest`` uses a reduced one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import j0

from ..channel import ChannelConfig, generate_taps
from ..estimators import PilotEstimate, genie_corr, lmmse_filter
from ..numerics import RngStream, finite_diff_grad
from ..phy import ModulationScheme, PilotScheme, SubframeConfig, build_subframe, transmit
from ..channel import realize
from ..structnet import _reference, backend, build_training_set, gradient_fault, loss_and_gradients, loss_value
from ..structnet.model import new_params
from ..structnet.training import AdamState, EpochOptions, training_arrays

FOLD_TOL = 1e-12
GRAD_TOL = 1e-5
LMMSE_TOL = 1e-10
STAT_TOL = 0.05


@dataclass
class SuiteResult:
    name: str
    passed: bool
    value: float
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name:<18} {self.detail} ({self.seconds:.2f} s)"


# ---------------------------------------------------------------- fold invariance


def fold_deviation(modulation: ModulationScheme, num_channels: int = 1000, nr: int = 2, seed: int = 0) -> float:
    """Largest change of the fold output over every interferer symbol.

    For each random 2-stream channel, target symbol and noise draw, the
    received vector is formed with every constellation point as the
    interfering symbol and folded with the true interferer column.
    """
    rng = RngStream(seed, 101)
    a = modulation.amplitude
    const = modulation.constellation()
    M = const.size
    H = rng.complex_normal((num_channels, nr, 2))
    x0 = rng.choice(const, num_channels)
    n = rng.complex_normal((num_channels, nr), 0.1)
    base = H[:, :, 0] * x0[:, None] + n                         # (N, nr)
    r = base[:, None, :] + H[:, None, :, 1] * const[None, :, None]   # (N, M, nr)
    Wk = np.repeat(H, M, axis=0)
    z, _ = _reference.fold_batch(r.reshape(-1, nr), Wk, np.zeros(num_channels * M, dtype=np.int64), a)
    z = z.reshape(num_channels, M, nr)
    return float(np.max(np.abs(z - z[:, :1])))


def suite_fold(num_channels: int = 1000) -> SuiteResult:
    devs = {m: fold_deviation(ModulationScheme(m), num_channels) for m in (4, 16)}
    worst = max(devs.values())
    detail = ", ".join(f"{m}-QAM max dev {d:.1e}" for m, d in devs.items())
    return SuiteResult("fold-invariance", worst <= FOLD_TOL, worst, detail)


# ---------------------------------------------------------------- gradient check


def _problem(seed: int, K: int = 4, snr_db: float = 10.0):
    cc = ChannelConfig(num_subcarriers=K)
    sc = SubframeConfig(num_subcarriers=K, pilot_scheme=PilotScheme.NON_ORTHOGONAL)
    rng = RngStream(seed, 202)
    taps = generate_taps(cc, rng.child(0))
    real = realize(taps, cc)
    sf = build_subframe(sc, rng.child(1), rng.child(2))
    rx = transmit(sf, real, snr_db, rng.child(3))
    return real, sf, rx


def boundary_margin(batch, params) -> float:
    """Distance of the batch from the nearest fold cell edge or ReLU kink.

    Only exact for two streams, where each sample folds a single interferer.
    """
    data = training_arrays(batch)
    idx = np.arange(len(batch))
    f = _reference._forward(params.W, params.theta, params.shape, data, idx, params.amplitude)
    a = params.amplitude
    Wk, z, i = f["Wk"], f["z"], f["i"]
    j = 1 - i
    rows = np.arange(idx.size)
    wj = Wk[rows, :, j]
    res = np.sum(wj.conj() * z, axis=1) / np.sum(np.abs(wj) ** 2, axis=1)
    fold = np.min(np.minimum(a - np.abs(res.real), a - np.abs(res.imag))) / a
    _, a1, _, a2, _ = f["cache"]
    relu = min(np.min(np.abs(a1)), np.min(np.abs(a2)))
    return float(min(fold, relu))


def gradient_point(seed: int, batch_size: int = 16, smoothness: float = 0.1, eps: float = 1e-6,
                   margin: float = 1e-3, max_draws: int = 50):
    """Relative errors ``(W, theta)`` of the analytic gradient at one random off-boundary point."""
    rng = RngStream(seed, 203)
    real, sf, rx = _problem(seed)
    ts = build_training_set(sf, rx)
    W0 = real.H[sf.pilot_symbols[0]]
    for draw in range(max_draws):
        d = rng.child(draw)
        W = W0 + d.complex_normal(W0.shape, 0.05 ** 2)
        params = new_params(W, (16, 8), sf.config.modulation, d.child(1))
        batch = ts.subset(d.permutation(len(ts))[:batch_size])
        if boundary_margin(batch, params) > margin:
            break
    else:
        raise RuntimeError("no off-boundary point found")

    _, gW, gth = loss_and_gradients(batch, params, smoothness)

    def fW(x):
        q = params.copy()
        q.W = x.view(complex).reshape(W.shape)
        return loss_value(batch, q, smoothness)

    def fth(x):
        q = params.copy()
        q.theta = x
        return loss_value(batch, q, smoothness)

    nW = finite_diff_grad(fW, params.W.copy().view(float).ravel(), eps).view(complex).reshape(W.shape)
    nth = finite_diff_grad(fth, params.theta.copy(), eps)
    rel_w = np.linalg.norm(nW - gW) / max(np.linalg.norm(nW), np.linalg.norm(gW), 1e-300)
    rel_t = np.linalg.norm(nth - gth) / max(np.linalg.norm(nth), np.linalg.norm(gth), 1e-300)
    return float(rel_w), float(rel_t)


def max_gradient_error(num_points: int = 100, seed: int = 0) -> float:
    errs = [max(gradient_point(seed * 100003 + p)) for p in range(num_points)]
    return float(max(errs))


def suite_gradcheck(num_points: int = 10, inject_fault: bool = False) -> SuiteResult:
    if inject_fault:
        with gradient_fault(1.01):
            err = max_gradient_error(num_points)
    else:
        err = max_gradient_error(num_points)
    note = " (fault injected)" if inject_fault else ""
    return SuiteResult("gradcheck", err <= GRAD_TOL, err,
                       f"{num_points} points, max rel error {err:.1e}{note}")


# ---------------------------------------------------------------- LMMSE oracle


def lmmse_oracle_error(K: int = 4, noise_var: float = 0.1, seed: int = 0, spacing: int = 128) -> float:
    """Filter output vs the Gaussian conditional mean from the joint precision matrix.

    Pilots sit ``spacing`` subcarriers apart; adjacent ones make the joint
    covariance nearly singular and the inverse-based oracle inaccurate.
    """
    rng = RngStream(seed, 303)
    cc = ChannelConfig(num_subcarriers=K * spacing)
    taps = generate_taps(cc, rng.child(0))
    subs = np.arange(K) * spacing
    corr = genie_corr(taps, subs, cc.subcarrier_spacing_hz)
    R = corr.R
    y = rng.complex_normal(K)
    pilot = PilotEstimate(y.reshape(1, K, 1, 1), subs[None, :], (0,))
    got = lmmse_filter(pilot, corr, noise_var).values.reshape(K)

    # joint covariance of (h, y = h + e) and conditioning through its inverse
    S = np.block([[R, R], [R, R + noise_var * np.eye(K)]])
    P = np.linalg.inv(S)
    want = -np.linalg.solve(P[:K, :K], P[:K, K:] @ y)
    return float(np.max(np.abs(got - want)))


def suite_lmmse(trials: int = 20) -> SuiteResult:
    err = max(lmmse_oracle_error(seed=s, noise_var=nv) for s in range(trials) for nv in (0.01, 0.1, 1.0))
    return SuiteResult("lmmse-oracle", err <= LMMSE_TOL, err, f"K=4, max abs deviation {err:.1e}")


# ---------------------------------------------------------------- channel statistics


def channel_statistics(realizations: int = 2000, seed: int = 0, cfg: ChannelConfig | None = None):
    """Worst deviations of the empirical time and frequency correlations from theory.

    Returns ``(time_dev, freq_dev)``. Time lags cover ``f_D tau`` in
    ``[0, 2]``; frequency lags cover 0..63 subcarriers.
    """
    cfg = cfg or ChannelConfig()
    rng = RngStream(seed, 404)
    fd = cfg.doppler_hz
    lags_t = np.linspace(0.0, 2.0, 21) / fd
    lags_k = np.arange(64)
    acc_t = np.zeros(lags_t.size, dtype=complex)
    acc_f = np.zeros(lags_k.size, dtype=complex)
    taps = None
    for n in range(realizations):
        taps = generate_taps(cfg, rng.child(n))
        g = taps.gains(lags_t) / np.sqrt(taps.powers)             # (L, nr, nt, P), unit power
        acc_t += np.mean(g * np.conj(g[:1]), axis=(1, 2, 3))
        Hf = np.einsum("rcp,kp->krc", taps.gains(np.zeros(1))[0],
                       taps.frequency_response(lags_k, cfg.subcarrier_spacing_hz))
        acc_f += np.mean(Hf * np.conj(Hf[:1]), axis=(1, 2))
    emp_t = acc_t / realizations
    emp_f = acc_f / realizations
    theory_t = j0(2 * np.pi * fd * lags_t)
    theory_f = genie_corr(taps, lags_k, cfg.subcarrier_spacing_hz).R[:, 0]
    return float(np.max(np.abs(emp_t - theory_t))), float(np.max(np.abs(emp_f - theory_f)))


def suite_channel(realizations: int = 2000) -> SuiteResult:
    dt, df = channel_statistics(realizations)
    worst = max(dt, df)
    return SuiteResult("channel-statistics", worst <= STAT_TOL, worst,
                       f"{realizations} realizations, time dev {dt:.3f}, freq dev {df:.3f}")


# ---------------------------------------------------------------- backend agreement


def backend_deviation(epochs: int = 3, K: int = 64, seed: int = 0) -> float:
    """Largest parameter difference after identical epochs on both backends."""
    if "cython" not in backend.available():
        return 0.0
    real, sf, rx = _problem(seed, K=K, snr_db=15.0)
    data = training_arrays(build_training_set(sf, rx))
    W0 = real.H[sf.pilot_symbols[0]] * 0.9
    out = []
    for name in ("python", "cython"):
        impl = backend.get(name)
        params = new_params(W0.copy(), (16, 8), sf.config.modulation, RngStream(seed, 505))
        state = AdamState.fresh(params)
        shuffle = RngStream(seed, 506)
        for e in range(epochs):
            opts = EpochOptions(params.amplitude, 64, 1e-3, 1e-3, 0.9, 0.999, 1e-8, 1e-3, 1e-2, e >= 1)
            impl.run_epoch(state, data, shuffle.permutation(len(data["t"])).astype(np.int64), opts)
        out.append(params)
    return float(max(np.max(np.abs(out[0].W - out[1].W)), np.max(np.abs(out[0].theta - out[1].theta))))


def suite_backend() -> SuiteResult:
    if "cython" not in backend.available():
        return SuiteResult("backend-agreement", True, 0.0, "compiled kernel not built, skipped")
    dev = backend_deviation()
    return SuiteResult("backend-agreement", dev <= 1e-9, dev, f"max parameter difference {dev:.1e}")


def run_selftest(inject_fault: bool = False, full: bool = False) -> list:
    """Run every suite; ``full`` uses the acceptance-scale sizes."""
    suites = [
        lambda: suite_fold(1000),
        lambda: suite_gradcheck(100 if full else 10, inject_fault),
        lambda: suite_lmmse(),
        lambda: suite_channel(10000 if full else 2000),
        suite_backend,
    ]
    results = []
    for s in suites:
        t0 = time.perf_counter()
        r = s()
        r.seconds = time.perf_counter() - t0
        results.append(r)
    return results
