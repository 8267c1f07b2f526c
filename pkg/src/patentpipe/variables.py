"""Stage II: per-entry variable extraction.

Each repaired entry goes through a cheap model call that returns a JSON
object with the model-side keys ``patent_id``, ``name``, ``location``,
``description`` and ``date``. Those keys come verbatim from the prompt
assets and are mapped at this parse boundary to the dataset names
``assignee`` and ``title``. Absent values carry the literal sentinel
string "NaN". A call that exhausts its retries degrades to an
all-sentinel record flagged ``api_failed`` instead of aborting the
volume.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import LayoutVariant
from .extraction import (
    MalformedPayload,
    MissingTemplate,
    UsageCallback,
    _load_template,
    strip_code_fence,
)
from .gateway import ENTRY_RETRY, ExhaustedRetries, Gateway, GatewayError, ModelRequest, RetryPolicy
from .repair import RepairedRow

SENTINEL = "NaN"

# Model-side key -> dataset field name.
_KEY_MAP = {
    "patent_id": "patent_id",
    "name": "assignee",
    "location": "location",
    "description": "title",
    "date": "date",
}

_MAX_ID_DIGITS = {LayoutVariant.STANDARD: 6, LayoutVariant.TERMINAL_ID: 4}

FIELD_NAMES = ("patent_id", "assignee", "location", "title", "date")


@dataclass(frozen=True)
class PatentFields:
    patent_id: str = SENTINEL
    assignee: str = SENTINEL
    location: str = SENTINEL
    title: str = SENTINEL
    date: str = SENTINEL

    def as_dict(self) -> dict[str, str]:
        return {name: getattr(self, name) for name in FIELD_NAMES}


ALL_SENTINEL = PatentFields()


@dataclass(frozen=True)
class PatentRecord:
    volume_key: str
    page_first: int
    page_last: int
    entry: str
    category: str | None
    merged_from: tuple[int, ...]
    was_merged: bool
    fields: PatentFields
    api_failed: bool = False

    @property
    def row_ref(self) -> int:
        """Stable per-volume row identity: source_order of the first constituent."""
        return self.merged_from[0]

    @property
    def no_id(self) -> bool:
        return self.fields.patent_id == SENTINEL


class ExtraKeys(ValueError):
    pass


def render_variables_prompt(variant: LayoutVariant, entry_text: str) -> str:
    """Variable-extraction prompt with the entry appended at the bottom."""
    if not isinstance(variant, LayoutVariant):
        raise MissingTemplate(f"unknown layout variant {variant!r}")
    if not entry_text:
        raise ValueError("entry_text must be non-empty")
    template = _load_template(f"variables_{variant.value}.txt")
    return f"{template}\n{entry_text}"


def parse_fields_payload(
    text: str, variant: LayoutVariant = LayoutVariant.STANDARD, strict: bool = False
) -> PatentFields:
    """Parse the model's JSON object reply into the five dataset fields.

    Missing keys become the sentinel; unexpected keys raise only in
    strict mode. A non-sentinel patent_id must be all digits within the
    layout's length bound (six for standard volumes, four where the ID
    trails the entry).
    """
    body = text if strict else strip_code_fence(text)
    if not body.strip():
        raise MalformedPayload("root", "model reply contains no JSON")
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise MalformedPayload(f"offset {exc.pos}", exc.msg) from exc
    if not isinstance(payload, dict):
        raise MalformedPayload("root", f"expected a JSON object, got {type(payload).__name__}")

    extra = set(payload) - set(_KEY_MAP)
    if extra and strict:
        raise ExtraKeys(f"unexpected keys {sorted(extra)}")

    values: dict[str, str] = {}
    for model_key, field_name in _KEY_MAP.items():
        if model_key not in payload:
            values[field_name] = SENTINEL
            continue
        value = payload[model_key]
        if not isinstance(value, str):
            raise MalformedPayload(
                model_key, f"value must be a string, got {type(value).__name__}"
            )
        if value == "":
            raise MalformedPayload(model_key, "empty string is neither a value nor the sentinel")
        values[field_name] = value

    patent_id = values["patent_id"]
    if patent_id != SENTINEL:
        if not patent_id.isdigit():
            raise MalformedPayload("patent_id", f"expected decimal digits, got {patent_id!r}")
        if len(patent_id) > _MAX_ID_DIGITS[variant]:
            raise MalformedPayload(
                "patent_id",
                f"{len(patent_id)} digits exceeds the {variant.value} layout bound",
            )
    return PatentFields(**values)


def _build_request(row: RepairedRow, model_id: str, variant: LayoutVariant) -> ModelRequest:
    return ModelRequest(
        prompt=render_variables_prompt(variant, row.entry), model_id=model_id, temperature=0.0
    )


def _record(row: RepairedRow, volume_key: str, fields: PatentFields, api_failed: bool) -> PatentRecord:
    return PatentRecord(
        volume_key=volume_key,
        page_first=row.page_first,
        page_last=row.page_last,
        entry=row.entry,
        category=row.category,
        merged_from=row.merged_from,
        was_merged=row.was_merged,
        fields=fields,
        api_failed=api_failed,
    )


def extract_fields(
    row: RepairedRow,
    gateway: Gateway,
    policy: RetryPolicy = ENTRY_RETRY,
    model_id: str = "lite",
    variant: LayoutVariant = LayoutVariant.STANDARD,
    volume_key: str = "",
    strict: bool = False,
) -> PatentRecord:
    """Extract the five variables for one row.

    Exhausted retries never abort the volume: the record is written with
    all-sentinel fields and the api_failed flag for the review queue.
    """
    request = _build_request(row, model_id, variant)
    try:
        response = gateway.invoke(
            request, policy, validate=lambda text: parse_fields_payload(text, variant, strict)
        )
    except ExhaustedRetries:
        return _record(row, volume_key, ALL_SENTINEL, api_failed=True)
    fields = parse_fields_payload(response.text, variant, strict)
    return _record(row, volume_key, fields, api_failed=False)


def extract_fields_volume(
    rows: Sequence[RepairedRow],
    gateway: Gateway,
    policy: RetryPolicy = ENTRY_RETRY,
    model_id: str = "lite",
    variant: LayoutVariant = LayoutVariant.STANDARD,
    volume_key: str = "",
    max_in_flight: int = 8,
    strict: bool = False,
    usage_callback: UsageCallback | None = None,
) -> list[PatentRecord]:
    """Extract fields for all rows concurrently; record count in == record count out."""
    reqs = [_build_request(row, model_id, variant) for row in rows]
    results = gateway.invoke_many(
        reqs,
        policy,
        max_in_flight,
        validate=lambda text: parse_fields_payload(text, variant, strict),
    )
    records: list[PatentRecord] = []
    for row, result in zip(rows, results):
        if isinstance(result, GatewayError):
            records.append(_record(row, volume_key, ALL_SENTINEL, api_failed=True))
        else:
            if usage_callback is not None:
                usage_callback(result)
            fields = parse_fields_payload(result.text, variant, strict)
            records.append(_record(row, volume_key, fields, api_failed=False))
    return records


DATASET_CSV_HEADER = [
    "page",
    "entry",
    "category",
    "patent_id",
    "assignee",
    "location",
    "title",
    "date",
    "was_merged",
    "api_failed",
    "no_id",
]


def write_dataset_csv(records: Iterable[PatentRecord], path: str | Path) -> None:
    """Per-volume dataset export; ``page`` is the page where the entry begins."""
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(DATASET_CSV_HEADER)
        for rec in records:
            writer.writerow(
                [
                    rec.page_first,
                    rec.entry,
                    rec.category if rec.category is not None else "",
                    rec.fields.patent_id,
                    rec.fields.assignee,
                    rec.fields.location,
                    rec.fields.title,
                    rec.fields.date,
                    str(rec.was_merged).lower(),
                    str(rec.api_failed).lower(),
                    str(rec.no_id).lower(),
                ]
            )


def record_to_dict(rec: PatentRecord) -> dict:
    return {
        "volume_key": rec.volume_key,
        "page_first": rec.page_first,
        "page_last": rec.page_last,
        "entry": rec.entry,
        "category": rec.category,
        "merged_from": list(rec.merged_from),
        "was_merged": rec.was_merged,
        "fields": rec.fields.as_dict(),
        "api_failed": rec.api_failed,
    }


def record_from_dict(raw: dict) -> PatentRecord:
    return PatentRecord(
        volume_key=raw["volume_key"],
        page_first=raw["page_first"],
        page_last=raw["page_last"],
        entry=raw["entry"],
        category=raw["category"],
        merged_from=tuple(raw["merged_from"]),
        was_merged=raw["was_merged"],
        fields=PatentFields(**raw["fields"]),
        api_failed=raw["api_failed"],
    )


def write_records_json(records: Sequence[PatentRecord], path: str | Path) -> None:
    payload = [record_to_dict(rec) for rec in records]
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
    )


def read_records_json(path: str | Path) -> list[PatentRecord]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [record_from_dict(raw) for raw in payload]
