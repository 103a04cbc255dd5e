"""YAML experiment files with explicit units.

Example::

    name: two-flow
    duration: 200s
    seed: 0
    repeat: 15
    link:
      bandwidth: 100mbps
      rtt: 30ms
      buffer: 1bdp          # or a packet count
      loss: 1%
      queue: fifo
    flows:
      - controller: pcc
        start: 0s
      - controller: pcc
        start: 20s
        rct_pairs: 1
    metrics:
      window: 60s

Times need a unit (``us``, ``ms``, ``s``), bandwidths too (``kbps``, ``mbps``,
``gbps``, ``pps``).  Loss is a fraction or a percentage string.  A flow entry
may carry ``count: n`` to stand for n identical flows.  ``link.schedule`` (a
list of link entries each with an ``at`` time) or ``link.random`` (``period``
and optional ``seed``) make the link change over time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from ..controller import ControllerConfig
from ..sim.scenario import (
    DEFAULT_PACKET_SIZE,
    AimdParams,
    DynamicSchedule,
    FlowSpec,
    LinkSpec,
    QueueDiscipline,
    Scenario,
    ScenarioError,
    pcc_config,
    random_dynamic_schedule,
)


class ConfigError(ValueError):
    """Invalid experiment file; the message starts with the offending field."""

    def __init__(self, field: str, problem: str):
        super().__init__(f"{field}: {problem}")
        self.field = field


_NUM = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
_TIME_UNITS = {"us": 1e-6, "ms": 1e-3, "s": 1.0, "sec": 1.0, "min": 60.0}
_RATE_UNITS = {"bps": 1.0, "kbps": 1e3, "mbps": 1e6, "gbps": 1e9}


def parse_time(value: Any, field: str) -> float:
    if isinstance(value, str):
        m = re.fullmatch(_NUM + r"\s*([a-z]+)", value.strip().lower())
        if m and m.group(2) in _TIME_UNITS:
            return float(m.group(1)) * _TIME_UNITS[m.group(2)]
    raise ConfigError(field, f"expected a time with unit (e.g. '30ms'), got {value!r}")


def parse_rate(value: Any, field: str, packet_size: int = DEFAULT_PACKET_SIZE) -> float:
    """Bandwidth in packets per second."""
    if isinstance(value, str):
        m = re.fullmatch(_NUM + r"\s*([a-z]+)", value.strip().lower())
        if m:
            x, unit = float(m.group(1)), m.group(2)
            if unit == "pps":
                return x
            if unit in _RATE_UNITS:
                return x * _RATE_UNITS[unit] / (8.0 * packet_size)
    raise ConfigError(field, f"expected a rate with unit (e.g. '100mbps'), got {value!r}")


def parse_fraction(value: Any, field: str) -> float:
    frac = None
    if isinstance(value, str) and value.strip().endswith("%"):
        try:
            frac = float(value.strip()[:-1]) / 100.0
        except ValueError:
            pass
    elif isinstance(value, (int, float)) and not isinstance(value, bool):
        frac = float(value)
    if frac is None:
        raise ConfigError(field, f"expected a fraction or percentage, got {value!r}")
    if not 0.0 <= frac < 1.0:
        raise ConfigError(field, f"must be in [0, 1), got {value!r}")
    return frac


def _check_keys(obj: Any, allowed: set[str], field: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(field, "expected a mapping")
    extra = set(obj) - allowed
    if extra:
        raise ConfigError(f"{field}.{sorted(extra)[0]}", "unknown key")
    return obj


_LINK_KEYS = {"bandwidth", "rtt", "prop_delay", "buffer", "loss", "ack_loss", "queue",
              "schedule", "random", "at"}


def _link_spec(d: dict, field: str, packet_size: int, base: LinkSpec | None = None) -> LinkSpec:
    _check_keys(d, _LINK_KEYS, field)
    if base is None and "bandwidth" not in d:
        raise ConfigError(f"{field}.bandwidth", "required")
    cap = parse_rate(d["bandwidth"], f"{field}.bandwidth", packet_size) if "bandwidth" in d else base.capacity
    if "rtt" in d and "prop_delay" in d:
        raise ConfigError(f"{field}.rtt", "give rtt or prop_delay, not both")
    if "rtt" in d:
        prop = parse_time(d["rtt"], f"{field}.rtt") / 2.0
    elif "prop_delay" in d:
        prop = parse_time(d["prop_delay"], f"{field}.prop_delay")
    elif base is not None:
        prop = base.prop_delay
    else:
        raise ConfigError(f"{field}.rtt", "required")
    buf_raw = d.get("buffer", "1bdp" if base is None else base.buffer_packets)
    if isinstance(buf_raw, str) and buf_raw.strip().lower().endswith("bdp"):
        try:
            k = float(buf_raw.strip()[:-3] or 1)
        except ValueError:
            raise ConfigError(f"{field}.buffer", f"bad BDP multiple {buf_raw!r}") from None
        buf = max(1, int(round(k * cap * 2.0 * prop)))
    elif isinstance(buf_raw, int) and not isinstance(buf_raw, bool):
        buf = buf_raw
    else:
        raise ConfigError(f"{field}.buffer", f"expected packets or 'Nbdp', got {buf_raw!r}")
    loss = parse_fraction(d.get("loss", base.random_loss if base else 0.0), f"{field}.loss")
    ack_loss = parse_fraction(d.get("ack_loss", base.ack_loss if base else 0.0), f"{field}.ack_loss")
    try:
        queue = QueueDiscipline.parse(d.get("queue", base.queue_discipline if base else "fifo"))
        return LinkSpec(cap, prop, buf, loss, queue, ack_loss)
    except ScenarioError as exc:
        raise ConfigError(field, str(exc)) from None


def _link(d: Any, packet_size: int, seed: int, duration: float):
    d = _check_keys(d, _LINK_KEYS, "link")
    if "at" in d:
        raise ConfigError("link.at", "only schedule entries take 'at'")
    if "schedule" in d and "random" in d:
        raise ConfigError("link.schedule", "give schedule or random, not both")
    if "random" in d:
        r = _check_keys(d["random"], {"period", "seed", "buffer_bdp"}, "link.random")
        if "period" not in r:
            raise ConfigError("link.random.period", "required")
        period = parse_time(r["period"], "link.random.period")
        if not period > 0:
            raise ConfigError("link.random.period", "must be positive")
        return random_dynamic_schedule(duration, period, int(r.get("seed", seed)),
                                       packet_size=packet_size,
                                       buffer_bdp=float(r.get("buffer_bdp", 1.0)))
    base = _link_spec({k: v for k, v in d.items() if k != "schedule"}, "link", packet_size)
    if "schedule" not in d:
        return base
    entries = d["schedule"]
    if not isinstance(entries, list) or not entries:
        raise ConfigError("link.schedule", "expected a non-empty list")
    points = [(0.0, base)]
    prev = base
    for k, e in enumerate(entries):
        field = f"link.schedule[{k}]"
        e = _check_keys(e, _LINK_KEYS - {"schedule", "random"}, field)
        if "at" not in e:
            raise ConfigError(f"{field}.at", "required")
        at = parse_time(e["at"], f"{field}.at")
        spec = _link_spec({kk: v for kk, v in e.items() if kk != "at"}, field, packet_size, prev)
        if at == 0.0:
            points[0] = (0.0, spec)
        else:
            points.append((at, spec))
        prev = spec
    try:
        return DynamicSchedule(tuple(points))
    except ScenarioError as exc:
        raise ConfigError("link.schedule", str(exc)) from None


_FLOW_KEYS = {"id", "controller", "start", "stop", "extra_rtt", "size", "count", "utility",
              "epsilon_min", "epsilon_max", "rct_pairs", "tm", "min_packets", "initial_rtt",
              "initial_cwnd", "slow_start"}


def _flows(entries: Any, link, packet_size: int) -> tuple[FlowSpec, ...]:
    if not isinstance(entries, list) or not entries:
        raise ConfigError("flows", "expected a non-empty list")
    first = link.points[0][1] if isinstance(link, DynamicSchedule) else link
    out: list[FlowSpec] = []
    next_id = 0
    for k, e in enumerate(entries):
        field = f"flows[{k}]"
        e = _check_keys(e, _FLOW_KEYS, field)
        count = e.get("count", 1)
        if not isinstance(count, int) or count < 1:
            raise ConfigError(f"{field}.count", "must be a positive integer")
        kind = str(e.get("controller", "pcc")).lower()
        start = parse_time(e["start"], f"{field}.start") if "start" in e else 0.0
        stop = parse_time(e["stop"], f"{field}.stop") if "stop" in e else None
        extra = parse_time(e["extra_rtt"], f"{field}.extra_rtt") if "extra_rtt" in e else 0.0
        rtt0 = (parse_time(e["initial_rtt"], f"{field}.initial_rtt") if "initial_rtt" in e
                else first.base_rtt + extra)
        size = e.get("size")
        if size is not None and (not isinstance(size, int) or size < 1):
            raise ConfigError(f"{field}.size", "must be a positive packet count")
        try:
            if kind == "pcc":
                tm = e.get("tm", [1.7, 2.2])
                if not (isinstance(tm, list) and len(tm) == 2):
                    raise ConfigError(f"{field}.tm", "expected [low, high] RTT multiples")
                ctl: ControllerConfig | AimdParams = pcc_config(
                    rtt0,
                    utility=e.get("utility", "safe"),
                    epsilon_min=float(e.get("epsilon_min", 0.01)),
                    epsilon_max=float(e.get("epsilon_max", 0.05)),
                    rct_pairs=int(e.get("rct_pairs", 2)),
                    tm_range=(float(tm[0]), float(tm[1])),
                    min_packets=int(e.get("min_packets", 10)),
                )
            elif kind == "aimd":
                ctl = AimdParams(initial_cwnd=float(e.get("initial_cwnd", 2.0)),
                                 slow_start=bool(e.get("slow_start", True)))
            else:
                raise ConfigError(f"{field}.controller", f"unknown controller {kind!r}")
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(field, str(exc)) from None
        for _ in range(count):
            fid = e.get("id", next_id) if count == 1 else next_id
            try:
                out.append(FlowSpec(int(fid), ctl, start, stop, extra, rtt0, size))
            except ScenarioError as exc:
                raise ConfigError(field, str(exc)) from None
            next_id = max(next_id, int(fid)) + 1
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    scenario: Scenario
    metrics_window: float = 60.0
    output_path: Path | None = None
    repeat: int = 1

    def __post_init__(self) -> None:
        if self.repeat < 1:
            raise ConfigError("repeat", "must be >= 1")

    def with_scenario(self, scenario: Scenario) -> "ExperimentConfig":
        return replace(self, scenario=scenario)


_TOP_KEYS = {"name", "duration", "seed", "repeat", "packet_size", "send_jitter", "link",
             "flows", "metrics", "output"}


def load_config(data: Any, source: str = "<config>") -> ExperimentConfig:
    """Build an ``ExperimentConfig`` from parsed YAML."""
    d = _check_keys(data, _TOP_KEYS, "config")
    for req in ("duration", "link", "flows"):
        if req not in d:
            raise ConfigError(req, "required")
    duration = parse_time(d["duration"], "duration")
    seed = d.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "must be a non-negative integer")
    packet_size = d.get("packet_size", DEFAULT_PACKET_SIZE)
    if not isinstance(packet_size, int) or packet_size <= 0:
        raise ConfigError("packet_size", "must be a positive byte count")
    link = _link(d["link"], packet_size, seed, duration)
    flows = _flows(d["flows"], link, packet_size)
    jitter = d.get("send_jitter", Scenario.send_jitter)
    if not isinstance(jitter, (int, float)) or isinstance(jitter, bool):
        raise ConfigError("send_jitter", "must be a number of service times")
    scenario = Scenario(link, flows, duration, seed, packet_size, send_jitter=float(jitter))
    try:
        scenario.validate()
    except ScenarioError as exc:
        raise ConfigError("scenario", str(exc)) from None
    metrics = _check_keys(d.get("metrics", {}), {"window"}, "metrics")
    window = parse_time(metrics["window"], "metrics.window") if "window" in metrics else 60.0
    repeat = d.get("repeat", 1)
    if not isinstance(repeat, int) or repeat < 1:
        raise ConfigError("repeat", "must be a positive integer")
    out = d.get("output")
    return ExperimentConfig(str(d.get("name", Path(source).stem)), scenario, window,
                            Path(out) if out else None, repeat)


def read_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"not valid YAML ({exc})") from None
    return load_config(data, str(path))
