"""Communication event-log ingestion.

Parses line-oriented logs (csv or jsonl), validates record invariants,
maps timestamps onto calendar week indices and drops excluded weeks
(holidays and similar periods configured per run).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import date, datetime, timezone
from typing import Iterable, TextIO

from .errors import DataError

DIRECT = "direct"
GROUP = "group"

_KIND_FROM_WIRE = {"dm": DIRECT, "group": GROUP}
_KIND_TO_WIRE = {DIRECT: "dm", GROUP: "group"}

CSV_FIELDS = ("ts", "sender", "recipients", "kind", "group_size")


class ParseError(DataError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, slots=True)
class EventRecord:
    """One timestamped communication event.

    ``recipients`` excludes the sender.  For group events ``group_size``
    is the total participant count and may exceed the number of listed
    recipients plus one (participants the log did not name).
    """

    timestamp: datetime
    sender: str
    recipients: tuple[str, ...]
    kind: str
    group_size: int | None = None

    def __post_init__(self):
        if self.kind not in (DIRECT, GROUP):
            raise DataError(f"unknown event kind {self.kind!r}")
        if not self.recipients:
            raise DataError("recipients must be nonempty")
        if self.sender in self.recipients:
            raise DataError(f"sender {self.sender!r} listed among recipients")
        if self.kind == DIRECT:
            if len(self.recipients) != 1:
                raise DataError("direct event must have exactly one recipient")
            if self.group_size is not None:
                raise DataError("direct event must not carry group_size")
        else:
            if self.group_size is None or self.group_size < 2:
                raise DataError("group event requires group_size >= 2")
            if self.group_size < len(self.recipients) + 1:
                raise DataError(
                    "group_size smaller than listed participant count"
                )

    def participants(self) -> tuple[str, ...]:
        """Sender plus recipients, the symmetric interaction set."""
        return (self.sender,) + self.recipients


@dataclass(frozen=True)
class CalendarConfig:
    """Anchors week index 0 and lists weeks dropped from the analysis."""

    week_origin: date
    excluded_weeks: frozenset[int] = frozenset()


_EPOCH = None  # placeholder to keep module import side-effect free


def _as_utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_timestamp(raw: str, lineno: int = 0) -> datetime:
    """RFC 3339 timestamp -> aware UTC datetime.  Naive inputs count as UTC."""
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        return _as_utc(datetime.fromisoformat(text))
    except ValueError as exc:
        raise ParseError(lineno, f"bad timestamp {raw!r}: {exc}") from None


def format_timestamp(ts: datetime) -> str:
    return _as_utc(ts).isoformat().replace("+00:00", "Z")


def _record_from_fields(
    lineno: int,
    ts: str,
    sender: str,
    recipients: tuple[str, ...],
    kind: str,
    group_size: int | None,
) -> EventRecord:
    if kind not in _KIND_FROM_WIRE:
        raise ParseError(lineno, f"unknown kind {kind!r}")
    if not sender:
        raise ParseError(lineno, "empty sender")
    if any(not r for r in recipients):
        raise ParseError(lineno, "empty recipient id")
    try:
        return EventRecord(
            timestamp=parse_timestamp(ts, lineno),
            sender=sender,
            recipients=recipients,
            kind=_KIND_FROM_WIRE[kind],
            group_size=group_size,
        )
    except ParseError:
        raise
    except DataError as exc:
        raise ParseError(lineno, str(exc)) from None


def _parse_csv_line(lineno: int, row: list[str]) -> EventRecord:
    if len(row) != len(CSV_FIELDS):
        raise ParseError(lineno, f"expected {len(CSV_FIELDS)} fields, got {len(row)}")
    ts, sender, recipients_raw, kind, size_raw = (f.strip() for f in row)
    recipients = tuple(r for r in recipients_raw.split(";") if r)
    if recipients_raw and not recipients:
        raise ParseError(lineno, "recipients field holds no ids")
    group_size: int | None = None
    if size_raw:
        try:
            group_size = int(size_raw)
        except ValueError:
            raise ParseError(lineno, f"bad group_size {size_raw!r}") from None
    return _record_from_fields(lineno, ts, sender, recipients, kind, group_size)


def _parse_jsonl_line(lineno: int, line: str) -> EventRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(lineno, f"bad json: {exc}") from None
    if not isinstance(obj, dict):
        raise ParseError(lineno, "record is not an object")
    try:
        ts = obj["ts"]
        sender = obj["sender"]
        recipients = obj["recipients"]
        kind = obj["kind"]
    except KeyError as exc:
        raise ParseError(lineno, f"missing field {exc.args[0]!r}") from None
    if isinstance(recipients, str):
        recipients = [r for r in recipients.split(";") if r]
    if not isinstance(recipients, list):
        raise ParseError(lineno, "recipients must be a list")
    group_size = obj.get("group_size")
    if group_size is not None and not isinstance(group_size, int):
        raise ParseError(lineno, f"bad group_size {group_size!r}")
    return _record_from_fields(
        lineno, str(ts), str(sender), tuple(str(r) for r in recipients), str(kind), group_size
    )


def parse_events(
    stream: TextIO | Iterable[str],
    fmt: str = "csv",
    on_error: str = "abort",
) -> tuple[list[EventRecord], int]:
    """Parse an event log into records, preserving input order.

    ``fmt`` selects the wire format (``csv`` with a header row, or
    ``jsonl``).  ``on_error='abort'`` raises :class:`ParseError` at the
    first malformed line; ``'skip'`` drops bad lines and reports how many
    were skipped in the second return slot.
    """
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {fmt!r}")
    if on_error not in ("abort", "skip"):
        raise ValueError(f"on_error must be 'abort' or 'skip', got {on_error!r}")

    events: list[EventRecord] = []
    skipped = 0

    if fmt == "csv":
        reader = csv.reader(stream)
        header_seen = False
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if not header_seen:
                header_seen = True
                if [c.strip() for c in row] == list(CSV_FIELDS):
                    continue  # header row
            try:
                events.append(_parse_csv_line(lineno, row))
            except ParseError:
                if on_error == "abort":
                    raise
                skipped += 1
    else:
        for lineno, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            try:
                events.append(_parse_jsonl_line(lineno, line))
            except ParseError:
                if on_error == "abort":
                    raise
                skipped += 1
    return events, skipped


def write_events(events: Iterable[EventRecord], stream: TextIO, fmt: str = "csv") -> None:
    """Serialize records in the same wire format ``parse_events`` accepts."""
    if fmt == "csv":
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for ev in events:
            writer.writerow(
                [
                    format_timestamp(ev.timestamp),
                    ev.sender,
                    ";".join(ev.recipients),
                    _KIND_TO_WIRE[ev.kind],
                    "" if ev.group_size is None else str(ev.group_size),
                ]
            )
    elif fmt == "jsonl":
        for ev in events:
            obj = {
                "ts": format_timestamp(ev.timestamp),
                "sender": ev.sender,
                "recipients": list(ev.recipients),
                "kind": _KIND_TO_WIRE[ev.kind],
            }
            if ev.group_size is not None:
                obj["group_size"] = ev.group_size
            stream.write(json.dumps(obj, separators=(",", ":")) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def assign_week(ts: datetime, cal: CalendarConfig) -> int:
    """Calendar week index of a timestamp: floor(days since origin / 7)."""
    origin = datetime.combine(cal.week_origin, datetime.min.time(), tzinfo=timezone.utc)
    delta = _as_utc(ts) - origin
    if delta.total_seconds() < 0:
        raise DataError(f"timestamp {ts.isoformat()} precedes week origin {cal.week_origin}")
    return delta.days // 7


def filter_excluded(
    events: Iterable[EventRecord], cal: CalendarConfig
) -> list[EventRecord]:
    """Drop events falling in excluded weeks; relative order preserved."""
    if not cal.excluded_weeks:
        return list(events)
    return [ev for ev in events if assign_week(ev.timestamp, cal) not in cal.excluded_weeks]


def events_by_week(
    events: Iterable[EventRecord], cal: CalendarConfig
) -> dict[int, list[EventRecord]]:
    """Bucket events by week index, dropping excluded weeks."""
    buckets: dict[int, list[EventRecord]] = {}
    for ev in events:
        week = assign_week(ev.timestamp, cal)
        if week in cal.excluded_weeks:
            continue
        buckets.setdefault(week, []).append(ev)
    return buckets
