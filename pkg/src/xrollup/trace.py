"""Structured execution trace: newline-delimited records, byte-deterministic.

One record per event (transaction executed, tree insert, VSM call,
bridge relay, oracle verdict), each carrying enough identifiers (round,
chain/rollup id) to reconstruct the run. Records serialize to canonical
JSON (sorted keys, hex-encoded bytes), so identical runs produce
identical trace bytes.
"""

from __future__ import annotations

import json
from typing import Any


def _canon(value: Any) -> Any:
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, (list, tuple)):
        return [_canon(v) for v in value]
    if isinstance(value, dict):
        return {str(_canon(k)): _canon(v) for k, v in value.items()}
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


class TraceLog:
    def __init__(self) -> None:
        self.records: list[dict] = []

    def emit(self, event: str, **fields: Any) -> None:
        record = {"event": event}
        record.update({k: _canon(v) for k, v in fields.items()})
        self.records.append(record)

    def to_bytes(self) -> bytes:
        lines = [
            json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records
        ]
        return ("\n".join(lines) + "\n").encode() if lines else b""

    def __iter__(self):
        return iter(self.records)
