"""Monte Carlo trials, SNR sweeps and CSV output."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from ..channel import generate_taps, realize
from ..estimators import (
    EmpiricalLmmse,
    estimate_noise_var,
    genie_lmmse_channel,
    ls_channel,
    pilot_mask_for,
    stacked_ls_channel,
)
from ..numerics import RngStream
from ..phy import PilotScheme, ber, build_subframe, detect_bits_mmse, nmse_db, transmit
from ..structnet import TrainingFailed, extract_channel, train_subframe
from .config import ExperimentConfig

log = logging.getLogger(__name__)

CSV_HEADER = ("seed", "trial", "snr_db", "method", "nmse_full_db", "nmse_pilot_db", "ber", "train_ms", "fallback")

# substream ids below the per-trial stream
_CHANNEL, _PAYLOAD, _PILOT_ORTH, _PILOT_NONORTH, _NOISE_ORTH, _NOISE_NONORTH, _HISTORY, _TRAIN = range(8)


@dataclass(frozen=True)
class ResultRecord:
    seed: int
    trial: int
    snr_db: float
    method: str
    nmse_full_db: float
    nmse_pilot_db: float
    ber: float
    train_ms: float
    fallback: bool

    def csv_row(self) -> list:
        return [str(self.seed), str(self.trial), _num(self.snr_db), self.method, _num(self.nmse_full_db),
                _num(self.nmse_pilot_db), _num(self.ber), _num(self.train_ms), str(int(self.fallback))]


def _num(v: float) -> str:
    return repr(float(v))


def _snr_arg(snr_db: float):
    return None if math.isinf(snr_db) and snr_db > 0 else snr_db


def pilot_nmse_db(H_est, H_true, pilot) -> float:
    """NMSE over the REs the estimator observed directly."""
    T, K = H_true.shape[:2]
    mask = pilot_mask_for(pilot, T, K)                           # (T, K, nt)
    m = np.broadcast_to(mask[:, :, None, :], H_true.shape)
    return nmse_db(H_est[m], H_true[m])


def _record(cfg, trial, snr, method, est, H, rx, sf, train_ms=math.nan, fallback=False) -> ResultRecord:
    s2 = est.noise_var if est.noise_var is not None else estimate_noise_var(rx, sf)
    bits = detect_bits_mmse(rx, sf, est.H, s2)
    return ResultRecord(cfg.seed, trial, float(snr), method, nmse_db(est.H, H), pilot_nmse_db(est.H, H, est.pilot),
                        ber(sf.bits, bits), train_ms, fallback)


def _failed(cfg, trial, snr, method, exc) -> ResultRecord:
    log.warning("trial %d, %s dB, %s failed: %s", trial, snr, method, exc)
    return ResultRecord(cfg.seed, trial, float(snr), method, math.nan, math.nan, math.nan, math.nan, False)


def run_trial(cfg: ExperimentConfig, trial: int) -> list:
    """All records of one trial: one channel, both pilot schemes, every SNR and method.

    Every random draw comes from ``RngStream(cfg.seed, trial)`` children, so
    the output does not depend on which thread runs the trial.
    """
    rng = RngStream(cfg.seed, trial)
    cc = cfg.channel
    taps = generate_taps(cc, rng.child(_CHANNEL))
    real = realize(taps, cc, 0.0)
    H = real.H
    sf_o = build_subframe(cfg.subframe_for(PilotScheme.ORTHOGONAL), rng.child(_PAYLOAD), rng.child(_PILOT_ORTH))
    sf_n = build_subframe(cfg.subframe_for(PilotScheme.NON_ORTHOGONAL), rng.child(_PAYLOAD),
                          rng.child(_PILOT_NONORTH))

    history = []
    if "em-lmmse" in cfg.methods:
        # earlier subframes of the same channel process feed the empirical statistics
        for h in range(cfg.em_window - 1):
            age = cfg.em_window - 1 - h
            hreal = realize(taps, cc, -age * cc.subframe_duration_s)
            hrng = rng.child(_HISTORY, h)
            hsf = build_subframe(sf_o.config, hrng.child(0), hrng.child(1))
            history.append((hreal, hsf))

    out = []
    for si, snr in enumerate(cfg.snr_db):
        snr_arg = _snr_arg(snr)
        rx_o = transmit(sf_o, real, snr_arg, rng.child(_NOISE_ORTH, si))
        rx_n = transmit(sf_n, real, snr_arg, rng.child(_NOISE_NONORTH, si))
        for method in cfg.methods:
            try:
                if method == "ls":
                    out.append(_record(cfg, trial, snr, method, ls_channel(rx_o, sf_o), H, rx_o, sf_o))
                elif method == "em-lmmse":
                    em = EmpiricalLmmse(cfg.em_window)
                    for h, (hreal, hsf) in enumerate(history):
                        em.observe(transmit(hsf, hreal, snr_arg, rng.child(_HISTORY, h, 2, si)), hsf)
                    out.append(_record(cfg, trial, snr, method, em.estimate(rx_o, sf_o), H, rx_o, sf_o))
                elif method == "genie-lmmse":
                    est = genie_lmmse_channel(rx_o, sf_o, taps, cc.subcarrier_spacing_hz, rx_o.noise_var)
                    out.append(_record(cfg, trial, snr, method, est, H, rx_o, sf_o))
                elif method == "stacked-ls":
                    out.append(_record(cfg, trial, snr, method, stacked_ls_channel(rx_n, sf_n), H, rx_n, sf_n))
                elif method == "structnet-ce":
                    out.append(_structnet_record(cfg, trial, si, snr, rng, H, rx_n, sf_n))
            except Exception as exc:  # noqa: BLE001 - failures are data, not crashes
                out.append(_failed(cfg, trial, snr, method, exc))
    return out


def _structnet_record(cfg, trial, si, snr, rng, H, rx, sf) -> ResultRecord:
    try:
        params, stats = train_subframe(rx, sf, cfg.train, rng.child(_TRAIN, si))
        est = extract_channel(params, sf)
        fallback = False
    except TrainingFailed as exc:
        stats = exc.stats
        est = stacked_ls_channel(rx, sf)
        fallback = True
    train_ms = stats.wall_ms if cfg.record_timing else math.nan
    return _record(cfg, trial, snr, "structnet-ce", est, H, rx, sf, train_ms, fallback)


def _sort_key(cfg):
    snr_pos = {s: i for i, s in enumerate(cfg.snr_db)}
    meth_pos = {m: i for i, m in enumerate(cfg.methods)}
    return lambda r: (r.trial, snr_pos[r.snr_db], meth_pos[r.method])


def run_trials(cfg: ExperimentConfig, workers: int | None = None) -> list:
    """Every trial, fanned out over ``workers`` threads, in canonical order."""
    workers = cfg.workers if workers is None else workers
    trials = range(cfg.trials)
    if workers <= 1:
        chunks = [run_trial(cfg, t) for t in trials]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda t: run_trial(cfg, t), trials))
    records = [r for c in chunks for r in c]
    records.sort(key=_sort_key(cfg))
    return records


def write_csv(records, path) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.csv_row())
    return path


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append(ResultRecord(int(row["seed"]), int(row["trial"]), float(row["snr_db"]), row["method"],
                                float(row["nmse_full_db"]), float(row["nmse_pilot_db"]), float(row["ber"]),
                                float(row["train_ms"]), bool(int(row["fallback"]))))
    return out


@dataclass(frozen=True)
class SummaryRow:
    snr_db: float
    method: str
    trials: int
    nmse_full_db: float
    nmse_pilot_db: float
    ber: float
    train_ms: float
    fallbacks: int


def summarize(records, cfg: ExperimentConfig | None = None) -> list:
    """Per-(SNR, method) means over trials. NMSE is averaged in dB; failed rows are skipped."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.snr_db, r.method), []).append(r)
    if cfg is not None:
        order = _sort_key(cfg)
        keys = sorted(groups, key=lambda k: order(ResultRecord(0, 0, k[0], k[1], 0, 0, 0, 0, False)))
    else:
        keys = sorted(groups)
    rows = []
    for snr, method in keys:
        g = groups[(snr, method)]
        ok = [r for r in g if np.isfinite(r.nmse_full_db)]

        def mean(attr, rs=ok):
            vals = [getattr(r, attr) for r in rs if np.isfinite(getattr(r, attr))]
            return float(np.mean(vals)) if vals else math.nan

        rows.append(SummaryRow(snr, method, len(ok), mean("nmse_full_db"), mean("nmse_pilot_db"), mean("ber"),
                               mean("train_ms"), sum(r.fallback for r in g)))
    return rows


def format_summary(rows) -> str:
    names = [f.name for f in fields(SummaryRow)]
    lines = ["{:>8} {:<13} {:>6} {:>13} {:>14} {:>10} {:>9} {:>9}".format(*names)]
    for r in rows:
        snr, method, n, nf, npl, b, ms, fb = astuple(r)
        lines.append(f"{snr:>8.1f} {method:<13} {n:>6d} {nf:>13.2f} {npl:>14.2f} {b:>10.2e} {ms:>9.1f} {fb:>9d}")
    return "\n".join(lines)


def run_sweep(cfg: ExperimentConfig, output=None, workers: int | None = None):
    """Run every trial, write the CSV and return ``(records, summary rows, path)``.

    An unwritable output path raises ``OSError`` before any trial runs.
    """
    path = Path(output) if output is not None else cfg.output_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w"):
        pass
    records = run_trials(cfg, workers)
    write_csv(records, path)
    return records, summarize(records, cfg), path
