"""Experiment configuration: INI file plus ``section.key=value`` overrides.

Schema (every key optional, defaults shown by ``structnet-ce sweep --dump-config``)::

    [experiment]  seed, trials, snr_db (comma list, "inf" = noiseless), methods,
                  output, workers, record_timing, em_window
    [channel]     nr, nt, num_taps, delay_spread_s, carrier_hz, speed_kmh,
                  subcarrier_spacing_hz, num_sinusoids, max_delay_factor
    [subframe]    num_subcarriers, num_symbols, pilot_symbols, modulation
    [train]       any TrainConfig field (hidden = "16, 8")

A relative ``output`` is resolved against ``$STRUCTNET_CE_OUTPUT_DIR`` when set.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..channel import ChannelConfig, kmh_to_mps
from ..phy import ModulationScheme, PilotScheme, SubframeConfig
from ..structnet.model import TrainConfig

METHODS = ("ls", "em-lmmse", "genie-lmmse", "stacked-ls", "structnet-ce")
ORTHOGONAL_METHODS = ("ls", "em-lmmse", "genie-lmmse")
OUTPUT_DIR_ENV = "STRUCTNET_CE_OUTPUT_DIR"


@dataclass(frozen=True)
class ExperimentConfig:
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    subframe: SubframeConfig = field(default_factory=SubframeConfig)
    snr_db: tuple = (10.0, 15.0, 20.0)
    trials: int = 10
    methods: tuple = METHODS
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    output: str = "results.csv"
    workers: int = 1
    # wall-clock train_ms makes CSVs differ between runs; off writes nan
    record_timing: bool = True
    em_window: int = 10

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("duplicate methods")
        if not self.snr_db:
            raise ValueError("snr_db must be non-empty")
        if self.workers < 1 or self.em_window < 1:
            raise ValueError("workers and em_window must be >= 1")
        if self.channel.nt != self.subframe.nt:
            raise ValueError("channel and subframe disagree on nt")
        if self.channel.num_subcarriers != self.subframe.num_subcarriers:
            raise ValueError("channel and subframe disagree on the number of subcarriers")
        if self.channel.symbols_per_subframe != self.subframe.num_symbols:
            raise ValueError("channel and subframe disagree on the number of symbols")

    @property
    def modulation(self) -> ModulationScheme:
        return self.subframe.modulation

    def subframe_for(self, scheme: PilotScheme) -> SubframeConfig:
        return self.subframe.with_scheme(scheme)

    def output_path(self) -> Path:
        p = Path(self.output)
        if not p.is_absolute() and os.environ.get(OUTPUT_DIR_ENV):
            p = Path(os.environ[OUTPUT_DIR_ENV]) / p
        return p


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _typed(cls, key: str, text: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if key not in fields:
        raise KeyError(f"unknown key {key!r} for {cls.__name__}")
    default = getattr(cls(), key)
    if isinstance(default, bool):
        return _bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float) or default is None:
        return float(text)
    if isinstance(default, tuple):
        return _ints(text)
    return text.strip()


def parse_overrides(items) -> dict:
    """``["train.epochs=10", ...]`` to ``{"train": {"epochs": "10"}}``."""
    out: dict = {}
    for item in items or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValueError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        out.setdefault(section.strip(), {})[key.strip()] = value.strip()
    return out


def from_mapping(sections: dict) -> ExperimentConfig:
    """Build a config from ``{section: {key: text}}``."""
    known = {"experiment", "channel", "subframe", "train"}
    unknown = set(sections) - known
    if unknown:
        raise KeyError(f"unknown config sections {sorted(unknown)}")
    ex = dict(sections.get("experiment", {}))
    ch = dict(sections.get("channel", {}))
    sf = dict(sections.get("subframe", {}))
    tr = dict(sections.get("train", {}))

    sub_kw = {}
    if "num_subcarriers" in sf:
        sub_kw["num_subcarriers"] = int(sf.pop("num_subcarriers"))
    if "num_symbols" in sf:
        sub_kw["num_symbols"] = int(sf.pop("num_symbols"))
    if "pilot_symbols" in sf:
        sub_kw["pilot_symbols"] = _ints(sf.pop("pilot_symbols"))
    if "modulation" in sf:
        sub_kw["modulation"] = ModulationScheme(int(sf.pop("modulation")))
    if sf:
        raise KeyError(f"unknown subframe keys {sorted(sf)}")

    ch_kw = {}
    if "speed_kmh" in ch:
        ch_kw["speed_mps"] = kmh_to_mps(float(ch.pop("speed_kmh")))
    for key, text in ch.items():
        if key in ("num_subcarriers", "symbols_per_subframe"):
            raise KeyError(f"set {key} through the [subframe] section")
        ch_kw[key] = _typed(ChannelConfig, key, text)
    nt = ch_kw.get("nt", ChannelConfig().nt)
    subframe = SubframeConfig(nt=nt, **sub_kw)
    channel = ChannelConfig(num_subcarriers=subframe.num_subcarriers,
                            symbols_per_subframe=subframe.num_symbols, **ch_kw)

    train = TrainConfig(**{k: _typed(TrainConfig, k, v) for k, v in tr.items()})

    ex_kw = {}
    for key, text in ex.items():
        if key == "snr_db":
            ex_kw[key] = _floats(text)
        elif key == "methods":
            ex_kw[key] = tuple(m.strip() for m in text.split(",") if m.strip())
        elif key in ("channel", "subframe", "train"):
            raise KeyError(f"{key} is a section, not an experiment key")
        else:
            ex_kw[key] = _typed(ExperimentConfig, key, text)
    return ExperimentConfig(channel=channel, subframe=subframe, train=train, **ex_kw)


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Read an INI file (optional) and apply ``section.key=value`` overrides."""
    sections: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        with open(path) as fh:
            parser.read_file(fh)
        sections = {s: dict(parser[s]) for s in parser.sections()}
    for section, kv in parse_overrides(overrides).items():
        sections.setdefault(section, {}).update(kv)
    return from_mapping(sections)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that :func:`load_config` reads back to an equal config."""
    parser = configparser.ConfigParser()
    parser["experiment"] = {
        "seed": _fmt(cfg.seed), "trials": _fmt(cfg.trials), "snr_db": _fmt(cfg.snr_db),
        "methods": _fmt(cfg.methods), "output": cfg.output, "workers": _fmt(cfg.workers),
        "record_timing": _fmt(cfg.record_timing), "em_window": _fmt(cfg.em_window),
    }
    c = cfg.channel
    parser["channel"] = {
        "nr": _fmt(c.nr), "nt": _fmt(c.nt), "num_taps": _fmt(c.num_taps),
        "delay_spread_s": repr(c.delay_spread_s), "carrier_hz": repr(c.carrier_hz),
        "speed_mps": repr(c.speed_mps), "subcarrier_spacing_hz": repr(c.subcarrier_spacing_hz),
        "symbol_duration_s": repr(c.symbol_duration_s), "num_sinusoids": _fmt(c.num_sinusoids),
        "max_delay_factor": repr(c.max_delay_factor),
    }
    s = cfg.subframe
    parser["subframe"] = {
        "num_subcarriers": _fmt(s.num_subcarriers), "num_symbols": _fmt(s.num_symbols),
        "pilot_symbols": _fmt(s.pilot_symbols), "modulation": _fmt(s.modulation.order),
    }
    parser["train"] = {f.name: _fmt(getattr(cfg.train, f.name)) for f in dataclasses.fields(TrainConfig)}
    import io

    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
