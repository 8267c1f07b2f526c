"""Volume manifests and page access.

A manifest is an authored JSON file describing one physical register
volume: its ordered pages, the patent-ID range printed in the table of
contents, the layout variant, and optional bulk-exclusion rules. The
page order defined here is the document order every later stage relies
on. Pages travel as opaque bytes; no decoding happens in this module.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator


class LayoutVariant(str, Enum):
    STANDARD = "standard"
    # Early volumes print the patent ID at the end of each entry,
    # prefixed "P. R."; prompts for all stages differ accordingly.
    TERMINAL_ID = "terminal_id"


class MissingFile(FileNotFoundError):
    pass


class MalformedManifest(ValueError):
    """Manifest file does not match the documented format."""

    def __init__(self, field: str, reason: str) -> None:
        super().__init__(f"manifest field {field!r}: {reason}")
        self.field = field
        self.reason = reason


class InvariantViolation(ValueError):
    pass


class UnknownPage(LookupError):
    pass


class HashMismatch(RuntimeError):
    """Bytes on disk no longer match the digest recorded in the manifest."""


@dataclass(frozen=True)
class PageRef:
    page_index: int  # 1-based
    image_path: str
    image_hash: str  # sha256, lowercase hex


@dataclass(frozen=True)
class Exclusions:
    """Bulk-delete predicate for composite volumes.

    Any combination of the three rules may be present; a record is
    excluded if its numeric ID matches any of them.
    """

    ids: frozenset[int] | None = None
    below: int | None = None
    above: int | None = None

    def matches(self, patent_id: int) -> bool:
        if self.ids is not None and patent_id in self.ids:
            return True
        if self.below is not None and patent_id < self.below:
            return True
        if self.above is not None and patent_id > self.above:
            return True
        return False


@dataclass(frozen=True)
class VolumeManifest:
    volume_key: str
    year_label: str
    layout_variant: LayoutVariant
    has_location: bool
    id_range: tuple[int, int]
    pages: tuple[PageRef, ...]
    exclusions: Exclusions | None = None
    base_dir: Path | None = None  # resolution root for relative image paths

    def __iter__(self) -> Iterator[PageRef]:
        return iter(self.pages)

    def page(self, page_index: int) -> PageRef:
        for ref in self.pages:
            if ref.page_index == page_index:
                return ref
        raise UnknownPage(f"volume {self.volume_key} has no page {page_index}")


def _require(raw: dict, field: str, kind: type) -> object:
    if field not in raw:
        raise MalformedManifest(field, "missing")
    value = raw[field]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise MalformedManifest(field, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _parse_exclusions(raw: object) -> Exclusions:
    if not isinstance(raw, dict):
        raise MalformedManifest("exclusions", "expected an object")
    known = {"ids", "below", "above"}
    extra = set(raw) - known
    if extra:
        raise MalformedManifest("exclusions", f"unknown keys {sorted(extra)}")
    if not raw:
        raise MalformedManifest("exclusions", "empty object; omit the key instead")
    ids = None
    if "ids" in raw:
        if not isinstance(raw["ids"], list) or not all(isinstance(i, int) for i in raw["ids"]):
            raise MalformedManifest("exclusions.ids", "expected a list of integers")
        ids = frozenset(raw["ids"])
    for bound in ("below", "above"):
        if bound in raw and not isinstance(raw[bound], int):
            raise MalformedManifest(f"exclusions.{bound}", "expected an integer")
    return Exclusions(ids=ids, below=raw.get("below"), above=raw.get("above"))


def load_manifest(path: str | Path) -> VolumeManifest:
    """Load and validate a volume manifest from a JSON file."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedManifest("<document>", f"not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise MalformedManifest("<document>", "root must be an object")

    volume_key = _require(raw, "volume_key", str)
    year_label = _require(raw, "year_label", str)
    variant_raw = _require(raw, "layout_variant", str)
    try:
        layout_variant = LayoutVariant(variant_raw)
    except ValueError:
        raise MalformedManifest("layout_variant", f"unknown variant {variant_raw!r}") from None
    has_location = _require(raw, "has_location", bool)

    id_range_raw = _require(raw, "id_range", dict)
    for key in ("first", "last"):
        if key not in id_range_raw or not isinstance(id_range_raw[key], int):
            raise MalformedManifest(f"id_range.{key}", "expected an integer")
    first, last = id_range_raw["first"], id_range_raw["last"]
    if first < 1:
        raise InvariantViolation(f"id_range.first must be positive, got {first}")
    if first > last:
        raise InvariantViolation(f"id_range first > last ({first} > {last})")

    pages_raw = _require(raw, "pages", list)
    if not pages_raw:
        raise MalformedManifest("pages", "must list at least one page")
    pages: list[PageRef] = []
    for pos, entry in enumerate(pages_raw):
        if not isinstance(entry, dict):
            raise MalformedManifest(f"pages[{pos}]", "expected an object")
        for key, kind in (("page_index", int), ("image_path", str), ("image_hash", str)):
            if key not in entry or not isinstance(entry[key], kind):
                raise MalformedManifest(f"pages[{pos}].{key}", f"expected {kind.__name__}")
        pages.append(
            PageRef(
                page_index=entry["page_index"],
                image_path=entry["image_path"],
                image_hash=entry["image_hash"].lower(),
            )
        )

    indices = [p.page_index for p in pages]
    if indices[0] < 1:
        raise InvariantViolation(f"page_index must be 1-based, got {indices[0]}")
    for prev, cur in zip(indices, indices[1:]):
        if cur != prev + 1:
            raise InvariantViolation(
                f"page order must be strictly increasing with no gaps; {prev} followed by {cur}"
            )

    exclusions = _parse_exclusions(raw["exclusions"]) if "exclusions" in raw else None

    return VolumeManifest(
        volume_key=volume_key,
        year_label=year_label,
        layout_variant=layout_variant,
        has_location=has_location,
        id_range=(first, last),
        pages=tuple(pages),
        exclusions=exclusions,
        base_dir=path.parent,
    )


def resolve_page(manifest: VolumeManifest, page_index: int) -> tuple[bytes, PageRef]:
    """Return the raw image bytes for a page, verified against the manifest digest."""
    ref = manifest.page(page_index)
    image_path = Path(ref.image_path)
    if not image_path.is_absolute() and manifest.base_dir is not None:
        image_path = manifest.base_dir / image_path
    if not image_path.is_file():
        raise MissingFile(str(image_path))
    data = image_path.read_bytes()
    digest = hashlib.sha256(data).hexdigest()
    if digest != ref.image_hash:
        raise HashMismatch(
            f"page {page_index} of volume {manifest.volume_key}: "
            f"digest {digest} != manifest {ref.image_hash}"
        )
    return data, ref
