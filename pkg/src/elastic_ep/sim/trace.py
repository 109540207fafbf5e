"""Line-delimited trace format.

Line 1 is a header ``{"format": "elastic-ep-trace", "version": 1, "config_hash": ..., ...}``.
Every following line is one JSON object with at least ``t`` (simulated
seconds, non-decreasing) and ``type``. The last record has type ``end``;
a file without it is treated as truncated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

from ..errors import TraceFormatError

TRACE_FORMAT = "elastic-ep-trace"
TRACE_VERSION = 1


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


@dataclass
class EventTrace:
    header: Dict[str, Any]
    records: List[Dict[str, Any]] = field(default_factory=list)
    # (seq, t, kind, actor, cause seq) for every processed engine event; not serialized
    event_log: List[tuple] = field(default_factory=list, repr=False, compare=False)

    def emit(self, t: float, type_: str, **fields) -> Dict[str, Any]:
        if self.records and t < self.records[-1]["t"]:
            raise ValueError(f"record {type_} at t={t} precedes t={self.records[-1]['t']}")
        rec = {"t": t, "type": type_, **fields}
        self.records.append(rec)
        return rec

    def of_type(self, *types: str) -> Iterator[Dict[str, Any]]:
        return (r for r in self.records if r["type"] in types)

    def first(self, type_: str) -> Optional[Dict[str, Any]]:
        return next(self.of_type(type_), None)

    def lines(self) -> Iterator[str]:
        yield _dumps(self.header)
        for rec in self.records:
            yield _dumps(rec)

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "EventTrace":
        if not text.strip():
            raise TraceFormatError("empty trace", line=1)
        lines = text.split("\n")
        complete = text.endswith("\n")
        if complete:
            lines.pop()
        parsed = []
        for i, line in enumerate(lines, start=1):
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                if i == len(lines) and not complete:
                    raise TraceFormatError("truncated record", line=i) from None
                raise TraceFormatError(f"malformed record: {exc.msg}", line=i) from None
            if not isinstance(obj, dict):
                raise TraceFormatError("record is not an object", line=i)
            parsed.append(obj)

        header = parsed[0]
        if header.get("format") != TRACE_FORMAT:
            raise TraceFormatError(f"not an {TRACE_FORMAT} file", line=1)
        if header.get("version") != TRACE_VERSION:
            raise TraceFormatError(f"unsupported trace version {header.get('version')!r}", line=1)
        records = parsed[1:]
        last_t = float("-inf")
        for i, rec in enumerate(records, start=2):
            if "t" not in rec or "type" not in rec:
                raise TraceFormatError("record lacks 't' or 'type'", line=i)
            if rec["t"] < last_t:
                raise TraceFormatError(f"timestamp {rec['t']} decreases", line=i)
            last_t = rec["t"]
            if rec["type"] == "end" and i != len(parsed):
                raise TraceFormatError("records follow the end record", line=i + 1)
        if not records or records[-1]["type"] != "end":
            raise TraceFormatError("trace is truncated: no end record", line=len(parsed) + 1)
        return cls(header, records)

    @classmethod
    def read(cls, path) -> "EventTrace":
        return cls.loads(Path(path).read_text())
