import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from structnet_ce import cli
from structnet_ce.harness import config as config_mod
from structnet_ce.harness import runner
from structnet_ce.harness.config import ExperimentConfig, dump_config, load_config, parse_overrides
from structnet_ce.harness.runner import CSV_HEADER, read_csv, run_sweep, run_trial, run_trials, summarize, write_csv
from structnet_ce.structnet import TrainingFailed
from structnet_ce.structnet.training import TrainStats

SMALL = ["subframe.num_subcarriers=32", "experiment.trials=2", "experiment.snr_db=10, 20", "train.epochs=3"]


def small(*extra):
    return load_config(None, SMALL + list(extra))


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.subframe.num_subcarriers == 1024 and cfg.channel.nr == 2
        assert cfg.methods == ("ls", "em-lmmse", "genie-lmmse", "stacked-ls", "structnet-ce")

    def test_ini_file(self, tmp_path):
        path = tmp_path / "exp.ini"
        path.write_text("[experiment]\nseed = 9\nsnr_db = 0, 5  # dB\nmethods = ls, stacked-ls\n"
                        "[channel]\nspeed_kmh = 50\nnum_taps = 4\n[subframe]\nnum_subcarriers = 64\n"
                        "modulation = 16\n[train]\nhidden = 8, 4\nsmoothness = 0\n")
        cfg = load_config(path, ["experiment.seed=10"])
        assert cfg.seed == 10 and cfg.snr_db == (0.0, 5.0) and cfg.methods == ("ls", "stacked-ls")
        assert cfg.channel.doppler_hz == pytest.approx(162.1, abs=0.1)
        assert cfg.channel.num_subcarriers == 64 and cfg.subframe.modulation.order == 16
        assert cfg.train.hidden == (8, 4) and cfg.train.smoothness == 0.0

    def test_dump_round_trip(self, tmp_path):
        cfg = small("experiment.snr_db=inf, 10", "channel.nr=4")
        path = tmp_path / "dump.ini"
        path.write_text(dump_config(cfg))
        assert load_config(path) == cfg

    @pytest.mark.parametrize("bad", [["experiment.trials=0"], ["experiment.methods="], ["experiment.methods=ls, foo"],
                                     ["nosuch.key=1"], ["channel.colour=red"], ["train.epochs=-1"],
                                     ["channel.num_subcarriers=8"]])
    def test_invalid(self, bad):
        with pytest.raises((KeyError, ValueError)):
            load_config(None, bad)

    def test_override_syntax(self):
        assert parse_overrides(["a.b=c=d"]) == {"a": {"b": "c=d"}}
        with pytest.raises(ValueError):
            parse_overrides(["novalue"])

    def test_output_dir_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv(config_mod.OUTPUT_DIR_ENV, str(tmp_path))
        assert small().output_path() == tmp_path / "results.csv"
        assert small(f"experiment.output={tmp_path / 'abs.csv'}").output_path() == tmp_path / "abs.csv"


class TestTrial:
    def test_noiseless_flat_ls(self):
        cfg = load_config(None, ["experiment.methods=ls", "experiment.snr_db=inf", "channel.num_taps=1",
                                 "channel.speed_kmh=0", "subframe.num_subcarriers=64", "experiment.trials=1"])
        (rec,) = run_trial(cfg, 0)
        assert rec.nmse_pilot_db <= -200 and rec.ber == 0.0

    def test_one_record_per_snr_and_method(self):
        cfg = small()
        recs = run_trial(cfg, 1)
        assert len(recs) == len(cfg.snr_db) * len(cfg.methods)
        assert {(r.snr_db, r.method) for r in recs} == {(s, m) for s in cfg.snr_db for m in cfg.methods}
        assert all(r.trial == 1 and r.seed == cfg.seed for r in recs)

    def test_timing_only_for_structnet(self):
        recs = run_trial(small(), 0)
        for r in recs:
            assert math.isfinite(r.train_ms) == (r.method == "structnet-ce")
        assert all(math.isnan(r.train_ms) for r in run_trial(small("experiment.record_timing=false"), 0))

    def test_pairing_independent_of_method_list(self):
        full = {(r.snr_db, r.method): r for r in run_trial(small("experiment.record_timing=false"), 0)}
        solo = run_trial(small("experiment.methods=stacked-ls", "experiment.record_timing=false"), 0)
        for r in solo:
            assert r == full[(r.snr_db, r.method)]

    def test_failure_is_recorded(self, monkeypatch):
        def boom(*args, **kwargs):
            raise np.linalg.LinAlgError("synthetic")

        monkeypatch.setattr(runner, "stacked_ls_channel", boom)
        recs = run_trial(small("experiment.methods=ls, stacked-ls"), 0)
        bad = [r for r in recs if r.method == "stacked-ls"]
        assert all(math.isnan(r.nmse_full_db) and not r.fallback for r in bad)
        assert all(math.isfinite(r.nmse_full_db) for r in recs if r.method == "ls")

    def test_training_failure_falls_back(self, monkeypatch):
        def fail(*args, **kwargs):
            err = TrainingFailed("synthetic")
            err.stats = TrainStats(0, math.nan, 1.5, True, 3, "python")
            raise err

        monkeypatch.setattr(runner, "train_subframe", fail)
        recs = run_trial(small("experiment.methods=stacked-ls, structnet-ce"), 0)
        by = {(r.snr_db, r.method): r for r in recs}
        for snr in (10.0, 20.0):
            s, f = by[(snr, "structnet-ce")], by[(snr, "stacked-ls")]
            assert s.fallback and s.train_ms == 1.5
            assert s.nmse_full_db == f.nmse_full_db


class TestSweep:
    def test_header_and_rows(self, tmp_path):
        cfg = small("experiment.methods=ls", "experiment.snr_db=10", "experiment.trials=1")
        recs, rows, path = run_sweep(cfg, tmp_path / "out.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(CSV_HEADER)
        assert lines[0] == "seed,trial,snr_db,method,nmse_full_db,nmse_pilot_db,ber,train_ms,fallback"
        assert len(lines) == 2

    def test_row_count(self, tmp_path):
        cfg = small("experiment.trials=3")
        recs, rows, path = run_sweep(cfg, tmp_path / "out.csv")
        assert len(path.read_text().splitlines()) == 1 + 3 * 2 * 5
        assert all(r.trials == 3 for r in rows) and len(rows) == 2 * 5

    def test_deterministic_bytes(self, tmp_path):
        cfg = small("experiment.record_timing=false")
        a = run_sweep(cfg, tmp_path / "a.csv")[2].read_bytes()
        b = run_sweep(cfg, tmp_path / "b.csv", workers=3)[2].read_bytes()
        assert a == b

    def test_csv_round_trip(self, tmp_path):
        recs = run_trials(small())
        path = write_csv(recs, tmp_path / "r.csv")
        back = read_csv(path)
        assert len(back) == len(recs)
        for x, y in zip(recs, back):
            assert_array_equal([x.nmse_full_db, x.ber, x.train_ms], [y.nmse_full_db, y.ber, y.train_ms])
            assert (x.method, x.trial, x.fallback) == (y.method, y.trial, y.fallback)

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError):
            run_sweep(small(), blocker / "sub" / "out.csv")

    def test_summary_skips_failures(self):
        recs = run_trial(small("experiment.methods=ls"), 0)
        recs.append(runner._failed(small(), 1, 10.0, "ls", RuntimeError("x")))
        rows = {r.snr_db: r for r in summarize(recs)}
        assert rows[10.0].trials == 1

    def test_table_one_ls_monotone(self):
        cfg = load_config(None, ["experiment.methods=ls", "experiment.snr_db=0, 10, 20, 30", "experiment.trials=5"])
        rows = summarize(run_trials(cfg), cfg)
        nmse = [r.nmse_full_db for r in rows]
        assert all(np.diff(nmse) < 0)

    def test_lmmse_ordering_at_20db(self):
        # 200 trials at the default grid size
        cfg = load_config(None, ["experiment.methods=ls, em-lmmse, genie-lmmse", "experiment.snr_db=20",
                                 "experiment.trials=200", "experiment.workers=2"])
        m = {r.method: r.nmse_full_db for r in summarize(run_trials(cfg), cfg)}
        assert m["genie-lmmse"] <= m["em-lmmse"] <= m["ls"]


class TestCli:
    def test_sweep(self, tmp_path, capsys):
        out = tmp_path / "o.csv"
        code = cli.main(["sweep", *sum((["-s", s] for s in SMALL), []), "-o", str(out), "-j", "2"])
        assert code == 0 and out.exists()
        assert "structnet-ce" in capsys.readouterr().out

    def test_run_prints_csv(self, capsys):
        assert cli.main(["run", "-s", "subframe.num_subcarriers=16", "-s", "experiment.methods=ls",
                         "-s", "experiment.snr_db=10", "--trial", "3"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == ",".join(CSV_HEADER) and lines[1].startswith("0,3,10.0,ls,")

    def test_dump_config(self, capsys):
        assert cli.main(["sweep", "--dump-config", "-s", "experiment.seed=4"]) == 0
        assert "seed = 4" in capsys.readouterr().out

    def test_config_error(self, capsys):
        assert cli.main(["sweep", "-s", "experiment.trials=0"]) == 2

    def test_io_error(self, tmp_path):
        blocker = tmp_path / "f"
        blocker.write_text("")
        assert cli.main(["sweep", *sum((["-s", s] for s in SMALL), []), "-o", str(blocker / "x.csv")]) == 2

    def test_gradcheck(self, capsys):
        assert cli.main(["gradcheck", "--points", "3"]) == 0
        assert cli.main(["gradcheck", "--points", "2", "--inject-fault"]) == 1

    def test_selftest_negative_control(self, capsys):
        assert cli.main(["selftest", "--inject-fault"]) == 1
        out = capsys.readouterr().out
        assert "[FAIL] gradcheck" in out and "[PASS] fold-invariance" in out

    def test_selftest(self, capsys):
        assert cli.main(["selftest"]) == 0
        assert "all suites passed" in capsys.readouterr().out
