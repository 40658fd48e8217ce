"""Experiment configuration: a single JSON document.

Example::

    {
      "scenario": {"template": "desk-cournot-2x1", "seed": 0},
      "tuning": {"rule": "certified", "c": "auto", "delta": "auto",
                 "tau": "auto", "nu": "auto", "sigma": "auto"},
      "init": "default",
      "stop": {"tol": 1e-8, "max_rounds": 1000000, "kkt_tol": null},
      "output": {"dir": "out", "stride": 10, "snapshots": false},
      "backend": "stacked",
      "full_information": false
    }

``tuning.rule`` is ``"certified"`` (default: every "auto" field follows the
certified rules) or ``"practical"`` (uncertified fast rule; other tuning
fields must then be omitted). ``scenario`` may instead name files:
``{"game": "game.json", "graph": "graph.txt"}``.
Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

TOP_KEYS = {"scenario", "tuning", "init", "stop", "output", "seed", "backend", "full_information"}
SCENARIO_KEYS = {"template", "seed", "game", "graph"}
TUNING_KEYS = {"rule", "c", "delta", "tau", "nu", "sigma", "step_scale"}
STOP_KEYS = {"tol", "max_rounds", "kkt_tol"}
OUTPUT_KEYS = {"dir", "stride", "snapshots"}


class ConfigError(ValueError):
    """Invalid configuration; the message carries ``file:line:col`` when known."""


@dataclass
class ExperimentConfig:
    template: str | None = None
    seed: int | None = None
    game_path: Path | None = None
    graph_path: Path | None = None
    tuning: dict = field(default_factory=dict)
    init: Any = "default"
    tol: float = 1e-8
    max_rounds: int = 10**6
    kkt_tol: float | None = None
    out_dir: Path = Path("out")
    stride: int = 10
    snapshots: bool = False
    backend: str = "stacked"
    full_information: bool = False
    source: str = "<config>"


def _locate(text: str, key: str) -> tuple[int, int] | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    if not m:
        return None
    line = text.count("\n", 0, m.start()) + 1
    col = m.start() - (text.rfind("\n", 0, m.start()) + 1) + 1
    return line, col


def _fail(src: str, text: str, key: str | None, msg: str):
    loc = _locate(text, key) if key else None
    where = f"{src}:{loc[0]}:{loc[1]}" if loc else src
    raise ConfigError(f"{where}: {msg}")


def _check_keys(src, text, section: str, doc: dict, allowed: set) -> None:
    if not isinstance(doc, dict):
        _fail(src, text, section, f"'{section}' must be an object")
    for k in doc:
        if k not in allowed:
            _fail(src, text, k, f"unknown key '{k}' in '{section}' (allowed: {', '.join(sorted(allowed))})")


def _number(src, text, key, v, allow_auto=False, allow_null=False, allow_list=False):
    if allow_auto and v == "auto":
        return v
    if allow_null and v is None:
        return None
    if allow_list and isinstance(v, list) and v and all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in v
    ):
        return [float(x) for x in v]
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    kinds = ["a number"] + (['"auto"'] if allow_auto else []) + (["null"] if allow_null else []) + (
        ["a list of numbers"] if allow_list else [])
    _fail(src, text, key, f"'{key}' must be {' or '.join(kinds)}, got {v!r}")


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    src = source
    if not isinstance(doc, dict):
        raise ConfigError(f"{src}: top level must be a JSON object")
    _check_keys(src, text, "config", doc, TOP_KEYS)
    base = base_dir or Path(".")
    cfg = ExperimentConfig(source=source)

    sc = doc.get("scenario")
    if sc is None:
        _fail(src, text, None, "missing 'scenario'")
    _check_keys(src, text, "scenario", sc, SCENARIO_KEYS)
    if "template" in sc:
        if "game" in sc or "graph" in sc:
            _fail(src, text, "template", "give either 'template' or 'game'+'graph', not both")
        cfg.template = str(sc["template"])
    elif "game" in sc and "graph" in sc:
        cfg.game_path = base / sc["game"]
        cfg.graph_path = base / sc["graph"]
        for key, path in (("game", cfg.game_path), ("graph", cfg.graph_path)):
            if not path.exists():
                _fail(src, text, key, f"file not found: {path}")
    else:
        _fail(src, text, "scenario", "'scenario' needs 'template' or both 'game' and 'graph'")
    seed = sc.get("seed", doc.get("seed"))
    if seed is not None:
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            _fail(src, text, "seed", f"seed must be a non-negative integer, got {seed!r}")
        cfg.seed = seed

    tun = doc.get("tuning", {})
    _check_keys(src, text, "tuning", tun, TUNING_KEYS)
    if "rule" in tun:
        if tun["rule"] not in ("certified", "practical"):
            _fail(src, text, "rule", f"rule must be 'certified' or 'practical', got {tun['rule']!r}")
        cfg.tuning["rule"] = tun["rule"]
    for k in ("c", "delta"):
        if k in tun:
            cfg.tuning[k] = _number(src, text, k, tun[k], allow_auto=True, allow_null=(k == "delta"))
    for k in ("tau", "nu", "sigma"):
        if k in tun:
            cfg.tuning[k] = _number(src, text, k, tun[k], allow_auto=True, allow_list=True)
    if "step_scale" in tun:
        cfg.tuning["step_scale"] = _number(src, text, "step_scale", tun["step_scale"])

    init = doc.get("init", "default")
    if isinstance(init, str):
        if init not in ("default", "midpoint"):
            _fail(src, text, "init", f"unknown init {init!r}")
        cfg.init = "default"
    elif isinstance(init, dict):
        if "file" in init:
            path = base / init["file"]
            if not path.exists():
                _fail(src, text, "file", f"file not found: {path}")
            cfg.init = {"file": path}
        elif {"bold_x", "z", "lam"} <= set(init) or "x" in init:
            cfg.init = init
        else:
            _fail(src, text, "init", "'init' object needs 'file', 'x' or 'bold_x'/'z'/'lam'")
    else:
        _fail(src, text, "init", "'init' must be \"default\" or an object")

    stop = doc.get("stop", {})
    _check_keys(src, text, "stop", stop, STOP_KEYS)
    if "tol" in stop:
        cfg.tol = _number(src, text, "tol", stop["tol"])
        if cfg.tol < 0:
            _fail(src, text, "tol", "tol must be >= 0")
    if "max_rounds" in stop:
        mr = stop["max_rounds"]
        if isinstance(mr, bool) or not isinstance(mr, int) or mr < 0:
            _fail(src, text, "max_rounds", f"max_rounds must be a non-negative integer, got {mr!r}")
        cfg.max_rounds = mr
    if "kkt_tol" in stop:
        cfg.kkt_tol = _number(src, text, "kkt_tol", stop["kkt_tol"], allow_null=True)

    out = doc.get("output", {})
    _check_keys(src, text, "output", out, OUTPUT_KEYS)
    if "dir" in out:
        cfg.out_dir = base / out["dir"]
    if "stride" in out:
        st = out["stride"]
        if isinstance(st, bool) or not isinstance(st, int) or st < 0:
            _fail(src, text, "stride", f"stride must be a non-negative integer, got {st!r}")
        cfg.stride = st
    if "snapshots" in out:
        cfg.snapshots = bool(out["snapshots"])

    backend = doc.get("backend", "stacked")
    if backend not in ("stacked", "agents"):
        _fail(src, text, "backend", f"backend must be 'stacked' or 'agents', got {backend!r}")
    cfg.backend = backend
    cfg.full_information = bool(doc.get("full_information", False))
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path), path.parent)
