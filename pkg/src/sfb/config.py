"""INI-style experiment configuration.

Every section and key is optional; omitted values take the defaults of
:class:`~sfb.harness.ExperimentConfig`.  Lists are comma separated.

    [experiment]
    horizons = 1, 2, 3, 6, 12
    models = ARMA, L-SVR, P-SVR, G-SVR, RBF-NN, MLP-NN
    lag = 1
    seed = 0
    eval_window = 11
    fast = false

    [split]
    train = 0.52
    valid = 0.33
    test = 0.15
    # dated block ends override the fractions
    train_end = 2006-12
    valid_end = 2011-12
    test_end = 2014-01

    [svr]
    C = 0.1, 1, 10, 100, 1000
    epsilon = 0.001, 0.01, 0.1
    delta2 = 0.1, 1, 10
    a1 = 1
    a2 = 0, 1
    degree = 2, 3
    tol = 1e-3

    [nn]
    restarts = 5
    max_epochs = 5000
    patience = 20
    check_every = 10
    learning_rate = 0.01
    lr_growth = 1.05
    min_delta = 1e-3
    q_schedule = 3: 5 10; 6: 10 20; 12: 20 30

    [arma]
    p_max = 12
    q_max = 12

    [metrics]
    dm_loss = ape
    dm_critical =

    [synth]
    regions = 17
    n = 183
    seed = 0
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace

from .dataset import DatedSplit, SplitSpec, parse_month
from .exceptions import ConfigError
from .harness import ExperimentConfig
from .neural import TrainPolicy
from .svr import SvrGrid

SCHEMA = {
    "experiment": {"horizons", "models", "lag", "seed", "eval_window", "fast"},
    "split": {"train", "valid", "test", "train_end", "valid_end", "test_end"},
    "svr": {"c", "epsilon", "delta2", "a1", "a2", "degree", "tol"},
    "nn": {"restarts", "max_epochs", "patience", "check_every", "learning_rate", "lr_growth",
           "min_delta", "q_schedule"},
    "arma": {"p_max", "q_max"},
    "metrics": {"dm_loss", "dm_critical"},
    "synth": {"regions", "n", "seed"},
}


@dataclass(frozen=True)
class SynthPanel:
    regions: int = 17
    n: int = 183
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig
    synth: SynthPanel | None = None


def _list(field, raw, conv):
    try:
        items = [conv(tok.strip()) for tok in raw.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(field, f"cannot parse {raw!r}: {exc}") from None
    if not items:
        raise ConfigError(field, "empty list")
    return tuple(items)


def _scalar(field, raw, conv):
    try:
        return conv(raw.strip())
    except ValueError:
        raise ConfigError(field, f"cannot parse {raw!r}") from None


def _bool(raw):
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _schedule(raw):
    out = []
    for chunk in raw.split(";"):
        if not chunk.strip():
            continue
        bound, _, sizes = chunk.partition(":")
        if not sizes.strip():
            raise ValueError(f"expected 'bound: q q ...' in {chunk!r}")
        out.append((int(bound), tuple(int(q) for q in sizes.split())))
    if not out:
        raise ValueError("empty schedule")
    return tuple(out)


def parse_config(text: str) -> RunConfig:
    """Parse configuration text; raises ConfigError naming the offending field."""
    # ';' separates schedule entries, so only '#' starts inline comments
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc).splitlines()[0]) from None
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")

    kw = {}
    ex = cp["experiment"] if cp.has_section("experiment") else {}
    if "horizons" in ex:
        kw["horizons"] = _list("horizons", ex["horizons"], int)
    if "models" in ex:
        kw["models"] = _list("models", ex["models"], str)
    if "lag" in ex:
        kw["p"] = _scalar("lag", ex["lag"], int)
    if "seed" in ex:
        kw["seed"] = _scalar("seed", ex["seed"], int)
    if "eval_window" in ex:
        raw = ex["eval_window"].strip().lower()
        kw["eval_window"] = None if raw in ("", "none", "all") else _scalar("eval_window", raw, int)
    if "fast" in ex:
        kw["fast"] = _scalar("fast", ex["fast"], _bool)

    if cp.has_section("split"):
        sp = cp["split"]
        if "train_end" in sp or "valid_end" in sp:
            if "train_end" not in sp or "valid_end" not in sp:
                raise ConfigError("split", "train_end and valid_end must be given together")
            ends = {k: sp.get(k, "").strip() or None for k in ("train_end", "valid_end", "test_end")}
            for key, value in ends.items():
                if value is not None:
                    _scalar(f"split.{key}", value, parse_month)
            kw["split"] = DatedSplit(ends["train_end"], ends["valid_end"], ends["test_end"])
        else:
            d = SplitSpec()
            try:
                kw["split"] = SplitSpec(
                    _scalar("split.train", sp.get("train", str(d.train_frac)), float),
                    _scalar("split.valid", sp.get("valid", str(d.valid_frac)), float),
                    _scalar("split.test", sp.get("test", str(d.test_frac)), float),
                )
            except ValueError as exc:
                raise ConfigError("split", str(exc)) from None

    if cp.has_section("svr"):
        s = cp["svr"]
        g = {}
        for key, attr, conv in (("c", "C", float), ("epsilon", "epsilon", float),
                                ("delta2", "delta2", float), ("a1", "a1", float),
                                ("a2", "a2", float), ("degree", "degree", int)):
            if key in s:
                g[attr] = _list(f"svr.{attr}", s[key], conv)
        if "tol" in s:
            g["tol"] = _scalar("svr.tol", s["tol"], float)
        for attr in ("C", "epsilon", "delta2", "tol"):
            vals = g.get(attr, ())
            vals = vals if isinstance(vals, tuple) else (vals,)
            floor_ok = (lambda v: v >= 0) if attr == "epsilon" else (lambda v: v > 0)
            if not all(floor_ok(v) for v in vals):
                raise ConfigError(f"svr.{attr}", "values out of range")
        kw["svr_grid"] = SvrGrid(**g)

    if cp.has_section("nn"):
        s = cp["nn"]
        pol = {}
        for key, conv in (("restarts", int), ("max_epochs", int), ("patience", int),
                          ("check_every", int), ("learning_rate", float), ("lr_growth", float),
                          ("min_delta", float)):
            if key in s:
                pol[key] = _scalar(f"nn.{key}", s[key], conv)
        try:
            kw["nn_policy"] = TrainPolicy(**pol)
        except ValueError as exc:
            raise ConfigError("nn", str(exc)) from None
        if "q_schedule" in s:
            kw["q_schedule"] = _scalar("nn.q_schedule", s["q_schedule"], _schedule)

    if cp.has_section("arma"):
        s = cp["arma"]
        if "p_max" in s:
            kw["arma_p_max"] = _scalar("arma.p_max", s["p_max"], int)
        if "q_max" in s:
            kw["arma_q_max"] = _scalar("arma.q_max", s["q_max"], int)

    if cp.has_section("metrics"):
        s = cp["metrics"]
        if "dm_loss" in s:
            kw["dm_loss"] = s["dm_loss"].strip()
        if s.get("dm_critical", "").strip():
            kw["dm_critical"] = _scalar("metrics.dm_critical", s["dm_critical"], float)

    synth = None
    if cp.has_section("synth"):
        s = cp["synth"]
        d = SynthPanel()
        synth = SynthPanel(
            _scalar("synth.regions", s.get("regions", str(d.regions)), int),
            _scalar("synth.n", s.get("n", str(d.n)), int),
            _scalar("synth.seed", s.get("seed", str(d.seed)), int),
        )
        if synth.regions < 1:
            raise ConfigError("synth.regions", "must be >= 1")
        if synth.n < 24:
            raise ConfigError("synth.n", "must be >= 24")
    return RunConfig(ExperimentConfig(**kw), synth)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def with_fast(cfg: RunConfig, fast: bool) -> RunConfig:
    return replace(cfg, experiment=replace(cfg.experiment, fast=fast))
