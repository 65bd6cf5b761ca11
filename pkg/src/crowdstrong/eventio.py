"""Reading and writing event lists and other line-oriented artifacts.

Two interchangeable event formats:

* tab-separated, one event per line: ``onset<TAB>offset<TAB>class_id`` with
  seconds at millisecond precision, one file per soundscape;
* line-oriented JSON: ``{"file": ..., "onset": ..., "offset": ..., "class": ...}``
  (optionally ``"salience"``), any number of soundscapes per file.

Lines starting with ``#`` are metadata headers and are skipped by all readers.
"""

from __future__ import annotations

import json
import os
from collections.abc import Iterable, Iterator, Mapping, Sequence
from pathlib import Path

from .timeline import EventInstance


def format_header(meta: Mapping[str, object]) -> str:
    pairs = " ".join(f"{k}={v}" for k, v in meta.items())
    return f"# {pairs}"


def read_header(path: str | os.PathLike[str]) -> dict[str, str]:
    """Parse key=value pairs from the leading comment lines of a file."""
    meta: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            for token in line[1:].split():
                if "=" in token:
                    key, value = token.split("=", 1)
                    meta[key] = value
    return meta


def _data_lines(path: str | os.PathLike[str]) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def write_events_tsv(
    path: str | os.PathLike[str],
    events: Iterable[EventInstance],
    header: Mapping[str, object] | None = None,
) -> None:
    """Write one soundscape's events as onset/offset/class rows."""
    lines = []
    if header:
        lines.append(format_header(header))
    for ev in sorted(events, key=lambda e: (e.onset, e.offset, e.class_id)):
        lines.append(f"{ev.onset:.3f}\t{ev.offset:.3f}\t{ev.class_id}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_events_tsv(path: str | os.PathLike[str], file_id: str | None = None) -> list[EventInstance]:
    """Read a single-soundscape event list; file_id defaults to the stem."""
    if file_id is None:
        file_id = Path(path).stem
    events = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected onset<TAB>offset<TAB>class, got {line!r}")
        try:
            onset, offset = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric time in {line!r}") from exc
        events.append(EventInstance(file_id=file_id, class_id=parts[2], onset=onset, offset=offset))
    return events


def write_events_jsonl(
    path: str | os.PathLike[str],
    events: Iterable[EventInstance],
    header: Mapping[str, object] | None = None,
) -> None:
    lines = []
    if header:
        lines.append(format_header(header))
    ordered = sorted(events, key=lambda e: (e.file_id, e.onset, e.offset, e.class_id))
    for ev in ordered:
        record: dict[str, object] = {
            "file": ev.file_id,
            "onset": round(ev.onset, 3),
            "offset": round(ev.offset, 3),
            "class": ev.class_id,
        }
        if ev.salience is not None:
            record["salience"] = round(ev.salience, 6)
        lines.append(json.dumps(record, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_events_jsonl(path: str | os.PathLike[str]) -> list[EventInstance]:
    events = []
    for lineno, line in _data_lines(path):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: invalid JSON: {line!r}") from exc
        try:
            events.append(
                EventInstance(
                    file_id=str(record["file"]),
                    class_id=str(record["class"]),
                    onset=float(record["onset"]),
                    offset=float(record["offset"]),
                    salience=float(record["salience"]) if "salience" in record else None,
                )
            )
        except KeyError as exc:
            raise ValueError(f"{path}:{lineno}: missing field {exc}") from exc
    return events


def read_events(path: str | os.PathLike[str]) -> list[EventInstance]:
    """Read an event list in either format, chosen by extension."""
    suffix = Path(path).suffix.lower()
    if suffix in {".jsonl", ".ndjson", ".json"}:
        return read_events_jsonl(path)
    return read_events_tsv(path)


def write_jsonl_records(
    path: str | os.PathLike[str],
    records: Iterable[Mapping[str, object]],
    header: Mapping[str, object] | None = None,
) -> None:
    lines = []
    if header:
        lines.append(format_header(header))
    lines.extend(json.dumps(dict(r), separators=(",", ":")) for r in records)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_jsonl_records(path: str | os.PathLike[str]) -> list[dict]:
    records = []
    for lineno, line in _data_lines(path):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: invalid JSON: {line!r}") from exc
    return records


def write_tsv_rows(
    path: str | os.PathLike[str],
    rows: Iterable[Sequence[object]],
    header: Mapping[str, object] | None = None,
    columns: Sequence[str] | None = None,
) -> None:
    lines = []
    if header:
        lines.append(format_header(header))
    if columns:
        lines.append("\t".join(columns))
    lines.extend("\t".join(str(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
