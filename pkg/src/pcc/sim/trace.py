"""Simulation output: event log, per-flow counters, NDJSON round trip.

The NDJSON file holds a header line, one line per event in time order, and
one summary line per flow.  Field order is fixed and floats are written with
``repr`` precision, so a trace read back gives bit-identical metrics and the
same digest.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, NamedTuple

import numpy as np

from ..monitor import MiRecord

SEND = "Send"
DELIVER = "Deliver"
DROP_BUFFER = "DropBuffer"
DROP_RANDOM = "DropRandom"
RATE_CHANGE = "RateChange"
MI_FINALIZED = "MiFinalized"
PHASE_CHANGE = "PhaseChange"

EVENT_KINDS = (SEND, DELIVER, DROP_BUFFER, DROP_RANDOM, RATE_CHANGE, MI_FINALIZED, PHASE_CHANGE)

# payload field names per kind, in serialization order
EVENT_FIELDS = {
    SEND: ("packet",),
    DELIVER: ("packet",),
    DROP_BUFFER: ("packet",),
    DROP_RANDOM: ("packet",),
    RATE_CHANGE: ("rate",),
    MI_FINALIZED: ("mi", "start", "end", "rate", "sent", "acked", "lost",
                   "throughput", "loss_rate", "avg_rtt", "utility"),
    PHASE_CHANGE: ("phase", "rate", "epsilon"),
}

TRACE_VERSION = 1


class TraceError(ValueError):
    pass


class TraceEvent(NamedTuple):
    time: float
    kind: str
    flow: int
    data: tuple

    def field(self, name: str) -> Any:
        return self.data[EVENT_FIELDS[self.kind].index(name)]


@dataclass
class FlowStats:
    id: int
    controller: str
    start: float
    stop: float
    sent: int = 0
    delivered: int = 0
    drop_buffer: int = 0
    drop_random: int = 0
    ack_lost: int = 0
    in_flight: int = 0
    # packets sent inside monitor intervals that ended finalized / abandoned / unfinished
    mi_finalized_packets: int = 0
    mi_abandoned_packets: int = 0
    mi_pending_packets: int = 0
    completion_time: float | None = None
    delivered_bins: list[int] = field(default_factory=list)

    _ORDER = ("id", "controller", "start", "stop", "sent", "delivered", "drop_buffer",
              "drop_random", "ack_lost", "in_flight", "mi_finalized_packets",
              "mi_abandoned_packets", "mi_pending_packets", "completion_time",
              "delivered_bins")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self._ORDER}

    @property
    def conserved(self) -> bool:
        return self.sent == self.delivered + self.drop_buffer + self.drop_random + self.in_flight


@dataclass
class Trace:
    header: dict
    events: list[TraceEvent]
    flows: dict[int, FlowStats]

    @property
    def duration(self) -> float:
        return float(self.header["duration"])

    @property
    def flow_ids(self) -> list[int]:
        return list(self.flows)

    def events_of(self, kind: str, flow: int | None = None) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind and (flow is None or e.flow == flow)]

    def mi_records(self, flow: int | None = None) -> list[MiRecord]:
        return [MiRecord(e.flow, *e.data) for e in self.events_of(MI_FINALIZED, flow)]

    def throughput_series(self, flow: int) -> np.ndarray:
        """Delivered packets per second, one entry per whole second of the run."""
        bins = np.asarray(self.flows[flow].delivered_bins, dtype=float)
        return bins

    def total_delivered(self) -> int:
        return sum(s.delivered for s in self.flows.values())

    def capacity_series(self) -> np.ndarray:
        """Link capacity (packets/s) averaged over each whole second."""
        n = len(next(iter(self.flows.values())).delivered_bins) if self.flows else 0
        out = np.zeros(n)
        for k in range(n):
            out[k] = self.capacity_integral(float(k), float(min(k + 1, self.duration)))
        return out

    def capacity_integral(self, t0: float, t1: float) -> float:
        """Packets the link could carry between ``t0`` and ``t1``."""
        points = self.header["link"]
        total = 0.0
        for i, p in enumerate(points):
            a = p["time"]
            b = points[i + 1]["time"] if i + 1 < len(points) else float("inf")
            lo, hi = max(a, t0), min(b, t1)
            if hi > lo:
                total += (hi - lo) * p["capacity"]
        return total

    # serialization

    def _lines(self) -> Iterable[str]:
        dump = lambda obj: json.dumps(obj, separators=(",", ":"), allow_nan=False)
        yield dump({"kind": "Header", **self.header})
        for e in self.events:
            row = {"t": e.time, "kind": e.kind, "flow": e.flow}
            for name, value in zip(EVENT_FIELDS[e.kind], e.data):
                row[name] = value
            yield dump(row)
        for s in self.flows.values():
            yield dump({"kind": "FlowSummary", **s.to_dict()})

    def to_ndjson(self) -> str:
        buf = io.StringIO()
        for line in self._lines():
            buf.write(line)
            buf.write("\n")
        return buf.getvalue()

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_ndjson())
        return path

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self._lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    @classmethod
    def from_ndjson(cls, text: str) -> "Trace":
        header: dict | None = None
        events: list[TraceEvent] = []
        flows: dict[int, FlowStats] = {}
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError(f"line {n}: not JSON ({exc})") from None
            kind = row.pop("kind", None)
            if kind == "Header":
                header = row
            elif kind == "FlowSummary":
                stats = FlowStats(**row)
                flows[stats.id] = stats
            elif kind in EVENT_FIELDS:
                try:
                    data = tuple(row[name] for name in EVENT_FIELDS[kind])
                    events.append(TraceEvent(row["t"], kind, row["flow"], data))
                except KeyError as exc:
                    raise TraceError(f"line {n}: {kind} event missing {exc}") from None
            else:
                raise TraceError(f"line {n}: unknown record kind {kind!r}")
        if header is None:
            raise TraceError("trace has no header line")
        if header.get("version") != TRACE_VERSION:
            raise TraceError(f"unsupported trace version {header.get('version')!r}")
        return cls(header, events, flows)

    @classmethod
    def read(cls, path: str | Path) -> "Trace":
        return cls.from_ndjson(Path(path).read_text())
