"""Structural validation, review flags, and the multi-volume merge.

The register's structure does the heavy lifting: patent numbers count up
from the table-of-contents range, and class codes appear in sorted
order. Violations become review flags queued for a human; nothing is
ever auto-corrected here (source defects such as genuine duplicate IDs
are flagged and kept). Gaps in the ID sequence are deliberately not
flagged: wartime volumes skipped thousands of numbers.
"""

from __future__ import annotations

import csv
import fcntl
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import VolumeManifest
from .variables import SENTINEL, PatentRecord

log = logging.getLogger(__name__)


class FlagKind(str, Enum):
    DUPLICATE_ID = "duplicate_id"
    ID_BELOW_RANGE = "id_below_range"
    ID_ABOVE_RANGE = "id_above_range"
    NO_ID = "no_id"
    API_FAILED = "api_failed"
    MERGED_ENTRY = "merged_entry"
    CATEGORY_ORDER = "category_order"
    TERMINAL_TRUNCATION = "terminal_truncation"
    NO_CATEGORY = "no_category"


class FlagStatus(str, Enum):
    OPEN = "open"
    RESOLVED = "resolved"
    DISMISSED = "dismissed"


@dataclass(frozen=True)
class AuditEvent:
    timestamp: float
    actor: str
    change: str


@dataclass(frozen=True)
class ReviewFlag:
    flag_id: str
    volume_key: str
    page: int
    row_ref: int
    kind: FlagKind
    detail: str = ""
    status: FlagStatus = FlagStatus.OPEN
    resolution: dict | None = None
    audit: tuple[AuditEvent, ...] = ()


def make_flag(
    record: PatentRecord, kind: FlagKind, detail: str = "", discriminator: str = ""
) -> ReviewFlag:
    """Build a flag with a deterministic identity.

    The identity covers volume, kind, row and the offending value, so
    re-running a check after a fix neither re-raises a resolved flag nor
    suppresses a genuinely new one on the same row.
    """
    parts = [record.volume_key, kind.value, str(record.row_ref)]
    if discriminator:
        parts.append(discriminator)
    return ReviewFlag(
        flag_id=":".join(parts),
        volume_key=record.volume_key,
        page=record.page_first,
        row_ref=record.row_ref,
        kind=kind,
        detail=detail,
    )


class CategoryParseError(ValueError):
    pass


_CATEGORY_RE = re.compile(r"\A(\d+)\s*([a-z]+)?\.?\Z")


@dataclass(frozen=True, order=True)
class CategoryCode:
    """Parsed class code; orders by (class number, subclass letters).

    An absent subclass sorts before "a", so "17" precedes "17a".
    Multi-letter suffixes are accepted: rejecting them would crash on
    scan noise that is better handled as a flag.
    """

    class_num: int
    subclass: str = ""

    @classmethod
    def parse(cls, text: str) -> "CategoryCode":
        match = _CATEGORY_RE.match(text.strip())
        if not match:
            raise CategoryParseError(f"not a class code: {text!r}")
        return cls(class_num=int(match.group(1)), subclass=match.group(2) or "")

    def __str__(self) -> str:
        return f"{self.class_num}{self.subclass}"


def check_ids(records: Sequence[PatentRecord], manifest: VolumeManifest) -> list[ReviewFlag]:
    """Duplicate and out-of-range detection over one volume's records.

    IDs compare numerically, so a zero-padded reading still collides
    with its plain form. Every occurrence of a duplicated value is
    flagged; sentinel IDs get a no_id flag instead.
    """
    flags: list[ReviewFlag] = []
    first, last = manifest.id_range
    numeric: dict[int, list[PatentRecord]] = {}
    for rec in records:
        pid = rec.fields.patent_id
        if pid == SENTINEL or not pid.isdigit():
            flags.append(make_flag(rec, FlagKind.NO_ID))
            continue
        numeric.setdefault(int(pid), []).append(rec)
    for value, recs in numeric.items():
        if len(recs) > 1:
            for rec in recs:
                flags.append(
                    make_flag(
                        rec,
                        FlagKind.DUPLICATE_ID,
                        detail=f"patent_id {value} occurs {len(recs)} times",
                        discriminator=str(value),
                    )
                )
        if value < first:
            for rec in recs:
                flags.append(
                    make_flag(
                        rec,
                        FlagKind.ID_BELOW_RANGE,
                        detail=f"patent_id {value} below volume range [{first}, {last}]",
                        discriminator=str(value),
                    )
                )
        elif value > last:
            for rec in recs:
                flags.append(
                    make_flag(
                        rec,
                        FlagKind.ID_ABOVE_RANGE,
                        detail=f"patent_id {value} above volume range [{first}, {last}]",
                        discriminator=str(value),
                    )
                )
    flags.sort(key=lambda f: (f.row_ref, f.kind.value))
    return flags


def check_category_order(records: Sequence[PatentRecord]) -> list[ReviewFlag]:
    """Flag class codes that fall below the running maximum in document order.

    Comparing against the running maximum (not the previous value) makes
    one misread heading yield one flag instead of cascading. Unparseable
    codes are flagged too; rows without a category are skipped here and
    flagged as no_category elsewhere.
    """
    flags: list[ReviewFlag] = []
    running_max: CategoryCode | None = None
    for rec in records:
        if rec.category is None:
            continue
        try:
            code = CategoryCode.parse(rec.category)
        except CategoryParseError:
            flags.append(
                make_flag(
                    rec,
                    FlagKind.CATEGORY_ORDER,
                    detail=f"unparseable category {rec.category!r}",
                    discriminator=rec.category,
                )
            )
            continue
        if running_max is not None and code < running_max:
            flags.append(
                make_flag(
                    rec,
                    FlagKind.CATEGORY_ORDER,
                    detail=f"category {code} after {running_max}",
                    discriminator=rec.category,
                )
            )
        else:
            running_max = code
    return flags


def auxiliary_flags(
    records: Sequence[PatentRecord], terminal_truncations: Iterable[int] = ()
) -> list[ReviewFlag]:
    """Flags carried by the pipeline itself: merges, failed calls, missing categories."""
    terminal = set(terminal_truncations)
    flags: list[ReviewFlag] = []
    for rec in records:
        if rec.was_merged:
            flags.append(
                make_flag(
                    rec,
                    FlagKind.MERGED_ENTRY,
                    detail=f"merged from rows {', '.join(map(str, rec.merged_from))}",
                )
            )
        if rec.api_failed:
            flags.append(make_flag(rec, FlagKind.API_FAILED))
        if rec.category is None:
            flags.append(make_flag(rec, FlagKind.NO_CATEGORY))
        if rec.row_ref in terminal:
            flags.append(
                make_flag(
                    rec, FlagKind.TERMINAL_TRUNCATION, detail="truncated at end of volume"
                )
            )
    return flags


def collect_flags(
    records: Sequence[PatentRecord],
    manifest: VolumeManifest,
    terminal_truncations: Iterable[int] = (),
) -> list[ReviewFlag]:
    """All structural and auxiliary flags for one volume, stably ordered."""
    flags = (
        check_ids(records, manifest)
        + check_category_order(records)
        + auxiliary_flags(records, terminal_truncations)
    )
    flags.sort(key=lambda f: (f.page, f.row_ref, f.kind.value, f.flag_id))
    return flags


def apply_exclusions(
    records: Sequence[PatentRecord], manifest: VolumeManifest
) -> tuple[list[PatentRecord], int]:
    """Drop records whose numeric ID matches the manifest's exclusion predicate.

    Composite volumes reprint entries from earlier years; those are
    removed in bulk, with the removal logged, never silent.
    """
    if manifest.exclusions is None:
        return list(records), 0
    kept: list[PatentRecord] = []
    removed = 0
    for rec in records:
        pid = rec.fields.patent_id
        if pid != SENTINEL and pid.isdigit() and manifest.exclusions.matches(int(pid)):
            removed += 1
            continue
        kept.append(rec)
    if removed:
        log.info(
            "volume %s: excluded %d of %d records by manifest rule",
            manifest.volume_key,
            removed,
            len(records),
        )
    return kept, removed


@dataclass(frozen=True)
class MergedRecord:
    global_id: int
    book: str
    book_id: int
    record: PatentRecord


def merge_volumes(volumes: Sequence[tuple[str, Sequence[PatentRecord]]]) -> list[MergedRecord]:
    """Concatenate validated volumes in key order with dataset-level metadata.

    global_id runs over the whole dataset; book_id restarts at 1 in each
    volume. Every input row appears exactly once.
    """
    merged: list[MergedRecord] = []
    global_id = 0
    for volume_key, records in sorted(volumes, key=lambda pair: pair[0]):
        for book_id, rec in enumerate(records, start=1):
            global_id += 1
            merged.append(
                MergedRecord(global_id=global_id, book=volume_key, book_id=book_id, record=rec)
            )
    return merged


MERGED_CSV_HEADER = [
    "global_id",
    "book",
    "book_id",
    "page",
    "entry",
    "category",
    "patent_id",
    "assignee",
    "location",
    "title",
    "date",
]


def write_merged_csv(merged: Sequence[MergedRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(MERGED_CSV_HEADER)
        for row in merged:
            rec = row.record
            writer.writerow(
                [
                    row.global_id,
                    row.book,
                    row.book_id,
                    rec.page_first,
                    rec.entry,
                    rec.category if rec.category is not None else "",
                    rec.fields.patent_id,
                    rec.fields.assignee,
                    rec.fields.location,
                    rec.fields.title,
                    rec.fields.date,
                ]
            )


class StoreUnavailable(RuntimeError):
    pass


def _flag_to_payload(flag: ReviewFlag) -> dict:
    return {
        "flag_id": flag.flag_id,
        "volume_key": flag.volume_key,
        "page": flag.page,
        "row_ref": flag.row_ref,
        "kind": flag.kind.value,
        "detail": flag.detail,
    }


def _flag_from_payload(raw: dict) -> ReviewFlag:
    return ReviewFlag(
        flag_id=raw["flag_id"],
        volume_key=raw["volume_key"],
        page=raw["page"],
        row_ref=raw["row_ref"],
        kind=FlagKind(raw["kind"]),
        detail=raw.get("detail", ""),
    )


class FlagStore:
    """Append-only flag queue persisted as one JSON-lines file per volume.

    Each line is an event (create / resolve / dismiss); the current
    state of a flag is the fold of its events, so history never
    shrinks. Writers are serialized per store through an OS file lock;
    a held lock surfaces as StoreUnavailable rather than blocking
    indefinitely.
    """

    def __init__(self, root: str | Path, lock_timeout: float = 5.0) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.lock_timeout = lock_timeout
        self._thread_lock = threading.Lock()

    def _volume_path(self, volume_key: str) -> Path:
        return self.root / f"{volume_key}.jsonl"

    def _lock_path(self) -> Path:
        return self.root / ".lock"

    def _append_events(self, volume_key: str, events: list[dict]) -> None:
        deadline = time.monotonic() + self.lock_timeout
        with self._thread_lock:
            with self._lock_path().open("a+") as lock_handle:
                while True:
                    try:
                        fcntl.flock(lock_handle.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
                        break
                    except BlockingIOError:
                        if time.monotonic() >= deadline:
                            raise StoreUnavailable(
                                f"flag store {self.root} is locked by another writer"
                            ) from None
                        time.sleep(0.05)
                try:
                    with self._volume_path(volume_key).open("a", encoding="utf-8") as handle:
                        for event in events:
                            handle.write(json.dumps(event, ensure_ascii=False) + "\n")
                finally:
                    fcntl.flock(lock_handle.fileno(), fcntl.LOCK_UN)

    def volumes(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.jsonl"))

    def load(self, volume_key: str) -> dict[str, ReviewFlag]:
        """Fold a volume's event log into current flag state, insertion-ordered."""
        path = self._volume_path(volume_key)
        flags: dict[str, ReviewFlag] = {}
        if not path.is_file():
            return flags
        with path.open(encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                event = json.loads(line)
                kind = event["event"]
                if kind == "create":
                    flag = _flag_from_payload(event["flag"])
                    flags[flag.flag_id] = flag
                elif kind in ("resolve", "dismiss"):
                    flag = flags[event["flag_id"]]
                    status = (
                        FlagStatus.RESOLVED if kind == "resolve" else FlagStatus.DISMISSED
                    )
                    flags[flag.flag_id] = replace(
                        flag,
                        status=status,
                        resolution=event.get("resolution"),
                        audit=flag.audit
                        + (
                            AuditEvent(
                                timestamp=event["timestamp"],
                                actor=event["actor"],
                                change=json.dumps(event.get("resolution") or {}, sort_keys=True),
                            ),
                        ),
                    )
        return flags

    def load_all(self) -> dict[str, ReviewFlag]:
        flags: dict[str, ReviewFlag] = {}
        for volume_key in self.volumes():
            flags.update(self.load(volume_key))
        return flags

    def emit(self, flags: Sequence[ReviewFlag]) -> int:
        """Persist new flags; emitting a flag whose identity already exists is a no-op.

        Returns the number of flags actually appended.
        """
        by_volume: dict[str, list[ReviewFlag]] = {}
        for flag in flags:
            by_volume.setdefault(flag.volume_key, []).append(flag)
        added = 0
        for volume_key, batch in by_volume.items():
            existing = self.load(volume_key)
            events = [
                {"event": "create", "flag": _flag_to_payload(flag)}
                for flag in batch
                if flag.flag_id not in existing
            ]
            if events:
                self._append_events(volume_key, events)
                added += len(events)
        return added

    def close(
        self,
        flag_id: str,
        action: str,
        resolution: dict | None,
        actor: str = "reviewer",
        timestamp: float | None = None,
    ) -> ReviewFlag:
        """Append a resolve/dismiss event; the flag must currently be open."""
        if action not in ("resolve", "dismiss"):
            raise ValueError(f"action must be 'resolve' or 'dismiss', got {action!r}")
        volume_key = flag_id.split(":", 1)[0]
        flags = self.load(volume_key)
        if flag_id not in flags:
            raise KeyError(flag_id)
        if flags[flag_id].status is not FlagStatus.OPEN:
            raise ValueError(f"flag {flag_id} is already {flags[flag_id].status.value}")
        self._append_events(
            volume_key,
            [
                {
                    "event": action,
                    "flag_id": flag_id,
                    "resolution": resolution,
                    "actor": actor,
                    "timestamp": timestamp if timestamp is not None else time.time(),
                }
            ],
        )
        return self.load(volume_key)[flag_id]
