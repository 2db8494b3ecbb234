"""Append-only structured run logs: one JSON object per line.

Line one is the header (config, seed, code version, timestamp); every later
line is a metric record ordered by step. Appends are line-atomic and flushed,
so a crashed run leaves a parseable prefix. The body (everything after the
header) is a pure function of (config, seed): rerunning a cell must reproduce
it byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


class RunLogWriter:
    def __init__(self, path, header: dict):
        self.path = path
        self._f = open(path, "w", encoding="utf-8")
        self.write({"kind": "header", **header})

    def write(self, record: dict) -> None:
        self._f.write(_dumps(record) + "\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class RunLog:
    path: str
    header: dict
    records: list


def read_runlog(path) -> RunLog:
    """Parse a run log, tolerating a truncated final line."""
    header = None
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                break  # partial trailing line from an interrupted run
            if header is None:
                if obj.get("kind") != "header":
                    raise ValueError(f"{path}: first record is not a header")
                header = obj
            else:
                records.append(obj)
    if header is None:
        raise ValueError(f"{path}: empty run log")
    return RunLog(str(path), header, records)


def body_bytes(path) -> bytes:
    """Raw bytes of every line after the header (the deterministic part)."""
    with open(path, "rb") as f:
        data = f.read()
    idx = data.find(b"\n")
    return data[idx + 1:] if idx >= 0 else b""
