"""Stage I, part 2: truncation classification and merging.

Entries cut at a column or page boundary arrive as separate fragments.
A cheap per-entry model call classifies each row as complete ("1") or
truncated ("0"); a maximal run of truncated rows followed by one
complete row then collapses into a single repaired entry. The reply
convention follows the classification prompt: "1" means the entry
contains its end, even if its beginning is missing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import LayoutVariant
from .extraction import MissingTemplate, RawRow, UsageCallback, _load_template
from .gateway import ENTRY_RETRY, Gateway, GatewayError, InvalidModelOutput, ModelRequest, RetryPolicy


class Verdict(str, Enum):
    COMPLETE = "complete"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class TruncationVerdict:
    row_ref: int  # source_order of the classified row
    verdict: Verdict
    raw_reply: str


@dataclass(frozen=True)
class RepairedRow:
    page_first: int
    page_last: int
    entry: str
    category: str | None
    merged_from: tuple[int, ...]  # source_order values, strictly increasing
    was_merged: bool


def render_repair_prompt(variant: LayoutVariant, entry_text: str) -> str:
    """Classification prompt with the entry appended at the bottom."""
    if not isinstance(variant, LayoutVariant):
        raise MissingTemplate(f"unknown layout variant {variant!r}")
    if not entry_text:
        raise ValueError("entry_text must be non-empty")
    template = _load_template(f"repair_{variant.value}.txt")
    return f"{template}\n{entry_text}"


def parse_verdict_reply(text: str) -> Verdict:
    reply = text.strip()
    if reply == "1":
        return Verdict.COMPLETE
    if reply == "0":
        return Verdict.TRUNCATED
    raise InvalidModelOutput(f"expected a bare '0' or '1', got {text!r}")


def classify_truncation(
    row: RawRow,
    gateway: Gateway,
    policy: RetryPolicy = ENTRY_RETRY,
    model_id: str = "lite",
    variant: LayoutVariant = LayoutVariant.STANDARD,
) -> TruncationVerdict:
    """Classify one row; any reply other than a bare 0/1 is retried as a failure."""
    request = ModelRequest(
        prompt=render_repair_prompt(variant, row.entry), model_id=model_id, temperature=0.0
    )
    response = gateway.invoke(request, policy, validate=parse_verdict_reply)
    return TruncationVerdict(
        row_ref=row.source_order,
        verdict=parse_verdict_reply(response.text),
        raw_reply=response.text,
    )


def classify_volume(
    rows: Sequence[RawRow],
    gateway: Gateway,
    policy: RetryPolicy = ENTRY_RETRY,
    model_id: str = "lite",
    variant: LayoutVariant = LayoutVariant.STANDARD,
    max_in_flight: int = 8,
    usage_callback: UsageCallback | None = None,
) -> list[TruncationVerdict]:
    """Classify all rows concurrently; raises if any row exhausts its retries."""
    reqs = [
        ModelRequest(
            prompt=render_repair_prompt(variant, row.entry), model_id=model_id, temperature=0.0
        )
        for row in rows
    ]
    results = gateway.invoke_many(reqs, policy, max_in_flight, validate=parse_verdict_reply)
    verdicts: list[TruncationVerdict] = []
    for row, result in zip(rows, results):
        if isinstance(result, GatewayError):
            raise result
        if usage_callback is not None:
            usage_callback(result)
        verdicts.append(
            TruncationVerdict(
                row_ref=row.source_order,
                verdict=parse_verdict_reply(result.text),
                raw_reply=result.text,
            )
        )
    return verdicts


def merge_truncated(
    rows: Sequence[RawRow], verdicts: Sequence[TruncationVerdict]
) -> tuple[list[RepairedRow], list[int]]:
    """Merge truncated runs with their completing row.

    Returns the repaired rows plus the source_order values of truncated
    rows left dangling at the end of the volume, which pass through
    unmerged and go to the review queue. Fragments are joined with a
    single space; a merged row keeps the category and starting page of
    its first constituent.
    """
    by_ref = {v.row_ref: v for v in verdicts}
    missing = [row.source_order for row in rows if row.source_order not in by_ref]
    if missing:
        raise ValueError(f"verdicts missing for rows {missing}")

    repaired: list[RepairedRow] = []
    terminal: list[int] = []
    run: list[RawRow] = []
    for row in rows:
        run.append(row)
        if by_ref[row.source_order].verdict is Verdict.COMPLETE:
            repaired.append(
                RepairedRow(
                    page_first=run[0].page,
                    page_last=run[-1].page,
                    entry=" ".join(r.entry for r in run),
                    category=run[0].category,
                    merged_from=tuple(r.source_order for r in run),
                    was_merged=len(run) > 1,
                )
            )
            run = []
    for row in run:  # trailing truncated rows: no completing row exists
        repaired.append(
            RepairedRow(
                page_first=row.page,
                page_last=row.page,
                entry=row.entry,
                category=row.category,
                merged_from=(row.source_order,),
                was_merged=False,
            )
        )
        terminal.append(row.source_order)
    return repaired, terminal


REPAIRED_CSV_HEADER = ["page_first", "page_last", "entry", "category", "was_merged", "merged_from"]


def write_repaired_csv(rows: Iterable[RepairedRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(REPAIRED_CSV_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row.page_first,
                    row.page_last,
                    row.entry,
                    row.category if row.category is not None else "",
                    str(row.was_merged).lower(),
                    ";".join(str(ref) for ref in row.merged_from),
                ]
            )


def read_repaired_csv(path: str | Path) -> list[RepairedRow]:
    rows: list[RepairedRow] = []
    with Path(path).open(newline="", encoding="utf-8") as handle:
        for record in csv.DictReader(handle):
            rows.append(
                RepairedRow(
                    page_first=int(record["page_first"]),
                    page_last=int(record["page_last"]),
                    entry=record["entry"],
                    category=record["category"] or None,
                    was_merged=record["was_merged"] == "true",
                    merged_from=tuple(int(x) for x in record["merged_from"].split(";")),
                )
            )
    return rows
