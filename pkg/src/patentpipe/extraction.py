"""Stage I, part 1: per-page entry extraction and volume assembly.

Every page is paired with the same extraction prompt and sent to the
model; the reply is a flat JSON array of one-key objects, each either a
class heading (``category``) or a patent entry (``entry``) in reading
order. Assembly attributes each entry to the nearest preceding category
across page boundaries and assigns a global row order.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .corpus import LayoutVariant, VolumeManifest, resolve_page
from .gateway import (
    PAGE_RETRY,
    Gateway,
    GatewayError,
    ModelRequest,
    ModelResponse,
    RetryPolicy,
    TokenUsage,
)

UsageCallback = Callable[[ModelResponse], None]


class ItemKind(str, Enum):
    ENTRY = "entry"
    CATEGORY = "category"


@dataclass(frozen=True)
class ExtractionItem:
    kind: ItemKind
    text: str


@dataclass(frozen=True)
class PageExtraction:
    page_index: int
    items: tuple[ExtractionItem, ...]
    usage: TokenUsage


@dataclass(frozen=True)
class RawRow:
    page: int
    entry: str
    category: str | None
    source_order: int  # 1-based, strictly increasing across the volume


@dataclass(frozen=True)
class CategoryBoundary:
    page: int
    category: str
    row_index: int  # index into the row list where this category starts applying


class MissingTemplate(LookupError):
    pass


class MalformedPayload(ValueError):
    def __init__(self, position: str, reason: str) -> None:
        super().__init__(f"{position}: {reason}")
        self.position = position
        self.reason = reason


class EmptyPayload(ValueError):
    """Reply contained no JSON at all; distinct from a valid empty array."""


def _load_template(name: str) -> str:
    ref = resources.files("patentpipe") / "prompts" / name
    if not ref.is_file():
        raise MissingTemplate(name)
    return ref.read_text(encoding="utf-8")


def render_extraction_prompt(variant: LayoutVariant) -> str:
    """Return the page-extraction prompt for a layout variant, verbatim."""
    if not isinstance(variant, LayoutVariant):
        raise MissingTemplate(f"unknown layout variant {variant!r}")
    return _load_template(f"extraction_{variant.value}.txt")


_FENCE_RE = re.compile(r"\A\s*```[a-zA-Z]*\s*\n(.*)\n\s*```\s*\Z", re.DOTALL)


def strip_code_fence(text: str) -> str:
    """Remove a single leading/trailing markdown code fence, if present."""
    match = _FENCE_RE.match(text)
    return match.group(1) if match else text


def parse_model_payload(text: str, strict: bool = False) -> list[ExtractionItem]:
    """Parse the model's JSON array reply into ordered extraction items.

    Each array element must be an object with exactly one key, either
    ``"category"`` or ``"entry"``, mapping to a non-empty string. Category
    text is normalized by stripping trailing periods and whitespace, which
    the prompt demands but models occasionally forget.
    """
    body = text if strict else strip_code_fence(text)
    if not body.strip():
        raise EmptyPayload("model reply contains no JSON")
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise MalformedPayload(f"offset {exc.pos}", exc.msg) from exc
    if not isinstance(payload, list):
        raise MalformedPayload("root", f"expected a JSON array, got {type(payload).__name__}")

    items: list[ExtractionItem] = []
    for pos, element in enumerate(payload):
        where = f"item {pos}"
        if not isinstance(element, dict):
            raise MalformedPayload(where, "expected an object")
        if len(element) != 1:
            raise MalformedPayload(where, f"expected exactly one key, got {len(element)}")
        key, value = next(iter(element.items()))
        if key not in (ItemKind.ENTRY.value, ItemKind.CATEGORY.value):
            raise MalformedPayload(where, f"unknown key {key!r}")
        if not isinstance(value, str):
            raise MalformedPayload(where, f"value must be a string, got {type(value).__name__}")
        if key == ItemKind.CATEGORY.value:
            value = value.rstrip().rstrip(".").rstrip()
        if not value.strip():
            raise MalformedPayload(where, "empty text")
        items.append(ExtractionItem(kind=ItemKind(key), text=value))
    return items


def serialize_items(items: Iterable[ExtractionItem]) -> str:
    """Inverse of parse_model_payload, producing the canonical one-key array."""
    return json.dumps([{item.kind.value: item.text} for item in items], ensure_ascii=False)


def extract_page(
    manifest: VolumeManifest,
    page_index: int,
    gateway: Gateway,
    policy: RetryPolicy = PAGE_RETRY,
    model_id: str = "pro",
    strict: bool = False,
) -> PageExtraction:
    """Send one page through the gateway and parse the reply.

    Malformed model output counts as a failed attempt and is retried
    under the same policy as transport failures.
    """
    request = build_page_request(manifest, page_index, model_id)
    response = gateway.invoke(
        request, policy, validate=lambda text: parse_model_payload(text, strict)
    )
    items = parse_model_payload(response.text, strict)
    return PageExtraction(page_index=page_index, items=tuple(items), usage=response.usage)


def build_page_request(
    manifest: VolumeManifest, page_index: int, model_id: str
) -> ModelRequest:
    prompt = render_extraction_prompt(manifest.layout_variant)
    image, _ = resolve_page(manifest, page_index)
    return ModelRequest(prompt=prompt, model_id=model_id, image=image, temperature=0.0)


def extract_volume(
    manifest: VolumeManifest,
    gateway: Gateway,
    policy: RetryPolicy = PAGE_RETRY,
    model_id: str = "pro",
    max_in_flight: int = 8,
    strict: bool = False,
    only_pages: Sequence[int] | None = None,
    usage_callback: UsageCallback | None = None,
) -> list[PageExtraction | GatewayError]:
    """Extract pages concurrently; slot i corresponds to the i-th requested page."""
    pages = [p.page_index for p in manifest.pages]
    if only_pages is not None:
        wanted = set(only_pages)
        pages = [p for p in pages if p in wanted]
    reqs = [build_page_request(manifest, p, model_id) for p in pages]
    results = gateway.invoke_many(
        reqs, policy, max_in_flight, validate=lambda text: parse_model_payload(text, strict)
    )
    out: list[PageExtraction | GatewayError] = []
    for page_index, result in zip(pages, results):
        if isinstance(result, GatewayError):
            out.append(result)
        else:
            if usage_callback is not None:
                usage_callback(result)
            out.append(
                PageExtraction(
                    page_index=page_index,
                    items=tuple(parse_model_payload(result.text, strict)),
                    usage=result.usage,
                )
            )
    return out


def assemble_volume(
    extractions: Sequence[PageExtraction],
) -> tuple[list[RawRow], list[CategoryBoundary]]:
    """Fold per-page items into rows carrying the nearest preceding category.

    Category state persists across page boundaries; entries before the
    first category of the whole volume keep ``category=None`` and are
    flagged downstream for review. A category equal to the current one is
    a no-op boundary.
    """
    rows: list[RawRow] = []
    boundaries: list[CategoryBoundary] = []
    current: str | None = None
    order = 0
    for page in sorted(extractions, key=lambda p: p.page_index):
        for item in page.items:
            if item.kind is ItemKind.CATEGORY:
                if item.text != current:
                    current = item.text
                    boundaries.append(
                        CategoryBoundary(
                            page=page.page_index, category=current, row_index=len(rows)
                        )
                    )
            else:
                order += 1
                rows.append(
                    RawRow(
                        page=page.page_index,
                        entry=item.text,
                        category=current,
                        source_order=order,
                    )
                )
    return rows, boundaries


RAW_CSV_HEADER = ["page", "entry", "category", "source_order"]


def write_rows_csv(rows: Iterable[RawRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(RAW_CSV_HEADER)
        for row in rows:
            writer.writerow(
                [row.page, row.entry, row.category if row.category is not None else "", row.source_order]
            )


def read_rows_csv(path: str | Path) -> list[RawRow]:
    rows: list[RawRow] = []
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        for record in reader:
            rows.append(
                RawRow(
                    page=int(record["page"]),
                    entry=record["entry"],
                    category=record["category"] or None,
                    source_order=int(record["source_order"]),
                )
            )
    return rows
