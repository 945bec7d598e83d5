"""Time one training epoch and one full train_subframe call on each backend.

    python benchmarks/bench_kernel.py --subcarriers 1024 --repeats 5
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from structnet_ce.channel import ChannelConfig, generate
from structnet_ce.numerics import RngStream
from structnet_ce.phy import SubframeConfig, build_subframe, transmit
from structnet_ce.structnet import TrainConfig, build_training_set, train_subframe
from structnet_ce.structnet import backend
from structnet_ce.structnet.model import new_params
from structnet_ce.structnet.training import AdamState, EpochOptions, training_arrays


def setup(K: int, snr_db: float, seed: int):
    cc = ChannelConfig(num_subcarriers=K)
    sc = SubframeConfig(num_subcarriers=K)
    real = generate(cc, seed)
    sf = build_subframe(sc, RngStream(seed, 1), RngStream(seed, 2))
    rx = transmit(sf, real, snr_db, RngStream(seed, 3))
    return real, sf, rx


def time_epoch(name, real, sf, rx, repeats, update_w):
    impl = backend.get(name)
    cfg = TrainConfig()
    data = training_arrays(build_training_set(sf, rx))
    n = data["t"].size
    times = []
    for r in range(repeats):
        params = new_params(real.H[2].copy(), cfg.hidden, sf.config.modulation, RngStream(r))
        state = AdamState.fresh(params)
        opts = EpochOptions(params.amplitude, cfg.batch_size, cfg.lr_classifier, cfg.lr_channel, cfg.beta1,
                            cfg.beta2, cfg.adam_eps, cfg.adam_eps_channel, cfg.smoothness, update_w)
        perm = RngStream(r, 9).permutation(n).astype(np.int64)
        t0 = time.perf_counter()
        impl.run_epoch(state, data, perm, opts)
        times.append(time.perf_counter() - t0)
    return 1e3 * float(np.median(times))


def time_train(name, sf, rx, repeats):
    times = []
    for r in range(repeats):
        _, stats = train_subframe(rx, sf, TrainConfig(), r, backend_name=name)
        times.append(stats.wall_ms)
    return float(np.median(times))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--subcarriers", type=int, default=1024)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    real, sf, rx = setup(args.subcarriers, args.snr_db, args.seed)
    names = list(backend.available())
    print(f"K={args.subcarriers}, {args.snr_db} dB, median of {args.repeats}")
    print(f"{'backend':<8} {'warm-up epoch ms':>17} {'full epoch ms':>14} {'train_subframe ms':>18}")
    rows = {}
    for name in names:
        rows[name] = (time_epoch(name, real, sf, rx, args.repeats, False),
                      time_epoch(name, real, sf, rx, args.repeats, True),
                      time_train(name, sf, rx, args.repeats))
        print(f"{name:<8} {rows[name][0]:>17.1f} {rows[name][1]:>14.1f} {rows[name][2]:>18.1f}")
    if len(rows) == 2:
        speed = [py / cy for py, cy in zip(rows["python"], rows["cython"])]
        print(f"speed-up {speed[0]:>24.1f}x {speed[1]:>13.1f}x {speed[2]:>17.1f}x")


if __name__ == "__main__":
    main()
