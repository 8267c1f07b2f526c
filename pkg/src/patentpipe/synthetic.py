"""Synthetic register corpus with ground truth and mock-gateway fixtures.

The generator lays out volumes of sequential-ID entries under monotone
class headings, splits a fraction of entries across columns and pages,
and injects known defects (duplicate IDs, an out-of-range ID, an entry
without an ID). Alongside the page images and manifests it emits a
fixture map that answers all three prompts from ground truth, plus the
reference dataset and the exact set of review flags the pipeline is
expected to raise. Everything is deterministic given the seed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import random
import textwrap
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image, ImageDraw, ImageFont

from .corpus import LayoutVariant
from .extraction import render_extraction_prompt
from .gateway import request_digest
from .repair import render_repair_prompt
from .validation import MERGED_CSV_HEADER
from .variables import SENTINEL, PatentFields, render_variables_prompt

_NAMES = [
    "MÜLLER, A.", "SCHMIDT, K.", "WEBER & SÖHNE", "FISCHER, Dr. H.",
    "BRAUN, J., und C. VOGT", "HOFFMANN, E.", "KRÜGER, W.", "SCHULZE, F. A.",
    "NEUMANN, O.", "ZIMMERMANN, G.", "HARTMANN & CO.", "LANGE, P.",
    "SCHRÖDER, B.", "KOCH, M.", "RICHTER, Th.", "WOLF, L.",
]

_LOCATIONS = [
    "Berlin", "Dresden", "Köln a. Rh.", "Chemnitz, Sachsen", "Hamburg",
    "München", "Stuttgart", "Leipzig", "Breslau", "Hannover",
    "Nürnberg", "Frankfurt a. M.", "Magdeburg", "Kladno, Böhmen",
]

_TITLE_HEADS = [
    "Verfahren zur Herstellung von", "Vorrichtung zum Formen von",
    "Neuerungen an", "Maschine zur Bearbeitung von",
    "Apparat zur Gewinnung von", "Einrichtung zur Kühlung von",
]

_TITLE_TAILS = [
    "Stahl", "Glaswaren", "Papierbahnen", "Zuckermassen", "Lederriemen",
    "Drahtseilen", "Ziegelsteinen", "Farbstoffen", "Garnspulen", "Hufeisen",
]

_MONTHS = [
    "Januar", "Februar", "März", "April", "Mai", "Juni",
    "Juli", "August", "September", "Oktober", "November", "Dezember",
]

_SUBCLASSES = ["", "a", "b", "c", "d", "e"]


@dataclass
class TruthEntry:
    volume_key: str
    category: str
    text: str
    fields: PatentFields
    page_first: int = 0
    row_ref: int = 0  # source_order of the first raw fragment
    split: str | None = None  # None | "column" | "page"


@dataclass
class SyntheticVolume:
    volume_key: str
    manifest_path: Path
    truth: list[TruthEntry]
    expected_flags: set[tuple[str, int]]  # (kind, row_ref)
    page_payloads: list[list[dict]] = field(default_factory=list)


@dataclass
class SyntheticCorpus:
    root: Path
    volumes: list[SyntheticVolume]
    fixtures_path: Path
    perfect_csv: Path

    @property
    def manifest_paths(self) -> list[Path]:
        return [volume.manifest_path for volume in self.volumes]

    def expected_flags(self) -> set[tuple[str, str, int]]:
        out: set[tuple[str, str, int]] = set()
        for volume in self.volumes:
            for kind, row_ref in volume.expected_flags:
                out.add((volume.volume_key, kind, row_ref))
        return out

    def truth_entries(self, volume_key: str) -> list[TruthEntry]:
        for volume in self.volumes:
            if volume.volume_key == volume_key:
                return volume.truth
        raise KeyError(volume_key)


def _make_title(rng: random.Random) -> str:
    return f"{rng.choice(_TITLE_HEADS)} {rng.choice(_TITLE_TAILS)}."


def _make_date(rng: random.Random, year: int) -> str:
    return f"{rng.randint(1, 28)}. {rng.choice(_MONTHS)} {year}"


def _categories(rng: random.Random, groups: int) -> list[str]:
    """Monotone walk over class codes, mixing plain and suffixed forms."""
    codes: list[str] = []
    class_num = rng.randint(1, 3)
    sub_index = 0
    for _ in range(groups):
        suffix = _SUBCLASSES[sub_index] if sub_index < len(_SUBCLASSES) else ""
        codes.append(f"{class_num}{suffix}")
        if rng.random() < 0.45 and sub_index + 1 < len(_SUBCLASSES):
            sub_index += 1
        else:
            class_num += rng.randint(1, 3)
            sub_index = 0
    return codes


def _split_text(text: str) -> tuple[str, str]:
    words = text.split(" ")
    k = max(1, min(len(words) - 1, len(words) // 2))
    return " ".join(words[:k]), " ".join(words[k:])


def _render_page_png(items: list[dict], page_index: int, volume_key: str) -> bytes:
    width, height = 1000, 1400
    image = Image.new("RGB", (width, height), "white")
    draw = ImageDraw.Draw(image)
    font = ImageFont.load_default()
    draw.text((60, 24), f"Register {volume_key} — Seite {page_index}", fill="black", font=font)

    columns = [(60, 80), (520, 80)]
    col, y = 0, columns[0][1]
    line_height = 14
    for item in items:
        if "category" in item:
            lines = [f"Klasse {item['category']}."]
        else:
            lines = textwrap.wrap(item["entry"], width=52) or [""]
        if y + line_height * (len(lines) + 1) > height - 60 and col == 0:
            col, y = 1, columns[1][1]
        x = columns[col][0]
        for line in lines:
            draw.text((x, y), line, fill="black", font=font)
            y += line_height
        y += line_height // 2
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return buffer.getvalue()


def _build_volume(
    rng: random.Random,
    volume_key: str,
    year: int,
    entries_total: int,
    split_fraction: float,
    inject: dict,
    variant: LayoutVariant = LayoutVariant.STANDARD,
) -> tuple[list[TruthEntry], list[list[dict]], tuple[int, int], set[tuple[str, int]]]:
    """Lay out one volume; returns truth, page payloads, id range, expected flags."""
    groups = max(4, entries_total // 9)
    codes = _categories(rng, groups)
    if variant is LayoutVariant.TERMINAL_ID:
        # early-volume headings carry no subclasses
        codes = sorted({c.rstrip("abcdef") for c in codes}, key=int)
        groups = len(codes)

    # Dole entries out to groups, sequential IDs, then apply injections.
    sizes = [entries_total // groups] * groups
    for i in range(entries_total - sum(sizes)):
        sizes[i % groups] += 1

    last_id = entries_total
    entries: list[TruthEntry] = []
    next_id = 1
    registration = 0
    for code, size in zip(codes, sizes):
        for _ in range(size):
            pid = next_id
            next_id += 1
            registration += 1
            name = rng.choice(_NAMES)
            location = rng.choice(_LOCATIONS)
            title = _make_title(rng)
            date = _make_date(rng, year)
            if variant is LayoutVariant.TERMINAL_ID:
                text = f"{name}, in {location}. {title} {date}. P. R. {pid}."
            else:
                text = f"{pid}. {name}, in {location}. {title} {date}. A — {registration}."
            entries.append(
                TruthEntry(
                    volume_key=volume_key,
                    category=code,
                    text=text,
                    fields=PatentFields(
                        patent_id=str(pid),
                        assignee=name,
                        location=location,
                        title=title,
                        date=date,
                    ),
                )
            )

    def rewrite_id(index: int, new_id: str) -> None:
        entry = entries[index]
        old = entry.fields.patent_id
        if variant is LayoutVariant.TERMINAL_ID:
            entry.text = entry.text.replace(f"P. R. {old}.", f"P. R. {new_id}.")
        else:
            entry.text = entry.text.replace(f"{old}. ", f"{new_id}. ", 1)
        entry.fields = PatentFields(**{**entry.fields.as_dict(), "patent_id": new_id})

    def drop_id(index: int) -> None:
        entry = entries[index]
        old = entry.fields.patent_id
        if variant is LayoutVariant.TERMINAL_ID:
            entry.text = entry.text.replace(f" P. R. {old}.", "")
        else:
            entry.text = entry.text.replace(f"{old}. ", "", 1)
        entry.fields = PatentFields(**{**entry.fields.as_dict(), "patent_id": SENTINEL})

    injected: list[tuple[str, int]] = []  # (kind, entry index)
    for dup_pair in inject.get("duplicates", []):
        source_index, target_index = dup_pair
        rewrite_id(target_index, entries[source_index].fields.patent_id)
        injected.append(("duplicate_id", source_index))
        injected.append(("duplicate_id", target_index))
    if "above_range" in inject:
        index = inject["above_range"]
        rewrite_id(index, str(last_id + 37))
        injected.append(("id_above_range", index))
    if "no_id" in inject:
        index = inject["no_id"]
        drop_id(index)
        injected.append(("no_id", index))

    # Choose which entries split; never the last entry of the volume, so
    # no truncation dangles at the end.
    candidates = list(range(len(entries) - 1))
    rng.shuffle(candidates)
    split_count = int(len(entries) * split_fraction)
    for position, index in enumerate(sorted(candidates[:split_count])):
        entries[index].split = "page" if position % 2 == 0 else "column"

    # Emit items page by page. A "page" split forces the page break
    # between its two fragments; a "column" split keeps both fragments on
    # one page as separate items.
    items_per_page = 12
    pages: list[list[dict]] = [[]]
    source_order = 0

    def current_page() -> list[dict]:
        return pages[-1]

    def break_page() -> None:
        if current_page():
            pages.append([])

    def maybe_break() -> None:
        if len(current_page()) >= items_per_page:
            break_page()

    previous_code: str | None = None
    for entry in entries:
        if entry.category != previous_code:
            maybe_break()
            current_page().append({"category": entry.category})
            previous_code = entry.category
        maybe_break()
        if entry.split is None:
            source_order += 1
            entry.row_ref = source_order
            entry.page_first = len(pages)
            current_page().append({"entry": entry.text})
        else:
            first, second = _split_text(entry.text)
            source_order += 1
            entry.row_ref = source_order
            entry.page_first = len(pages)
            current_page().append({"entry": first})
            if entry.split == "page":
                break_page()
            source_order += 1
            current_page().append({"entry": second})
    if not pages[-1]:
        pages.pop()

    expected: set[tuple[str, int]] = set()
    for kind, index in injected:
        expected.add((kind, entries[index].row_ref))
    for entry in entries:
        if entry.split is not None:
            expected.add(("merged_entry", entry.row_ref))

    return entries, pages, (1, last_id), expected


def generate_corpus(
    root: str | Path,
    seed: int = 7,
    volume_count: int = 3,
    entries_per_volume: int = 110,
    split_fraction: float = 0.10,
    model_extract: str = "pro",
    model_cheap: str = "lite",
    layout: LayoutVariant = LayoutVariant.STANDARD,
) -> SyntheticCorpus:
    """Write a complete synthetic corpus under ``root`` and return its description."""
    root = Path(root)
    rng = random.Random(seed)
    variant = layout
    extraction_prompt = render_extraction_prompt(variant)

    fixtures: dict[str, str] = {}
    volumes: list[SyntheticVolume] = []
    perfect_rows: list[list] = []
    start_year = 1879 if variant is LayoutVariant.TERMINAL_ID else 1890

    # Injection positions as fractions of the volume length so any corpus
    # size carries the same defects: two duplicated IDs, one out-of-range
    # ID, one entry with no ID.
    injection_specs: list[dict] = [
        {"duplicates": [(0.10, 0.48)]},
        {"duplicates": [(0.05, 0.65)], "above_range": 0.30},
        {"no_id": 0.40},
    ]

    def resolve(spec: dict, total: int) -> dict:
        def at(fraction: float) -> int:
            return min(total - 2, max(0, int(fraction * total)))

        resolved: dict = {}
        if "duplicates" in spec:
            resolved["duplicates"] = [
                (at(src), max(at(src) + 1, at(dst))) for src, dst in spec["duplicates"]
            ]
        if "above_range" in spec:
            resolved["above_range"] = at(spec["above_range"])
        if "no_id" in spec:
            resolved["no_id"] = at(spec["no_id"])
        return resolved

    for v in range(volume_count):
        volume_key = str(start_year + v)
        inject = (
            resolve(injection_specs[v % len(injection_specs)], entries_per_volume)
            if v < len(injection_specs)
            else {}
        )
        truth, pages, id_range, expected = _build_volume(
            rng, volume_key, start_year + v, entries_per_volume, split_fraction, inject,
            variant=variant,
        )

        image_dir = root / "images" / volume_key
        image_dir.mkdir(parents=True, exist_ok=True)
        page_refs = []
        for page_number, items in enumerate(pages, start=1):
            png = _render_page_png(items, page_number, volume_key)
            image_path = image_dir / f"page_{page_number:05}.png"
            image_path.write_bytes(png)
            page_refs.append(
                {
                    "page_index": page_number,
                    # relative to the manifest file, so the corpus can move
                    "image_path": f"../images/{volume_key}/{image_path.name}",
                    "image_hash": hashlib.sha256(png).hexdigest(),
                }
            )
            fixtures[request_digest(model_extract, extraction_prompt, png)] = json.dumps(
                items, ensure_ascii=False
            )

        # Repair fixtures: every raw row needs a verdict; variables
        # fixtures answer from ground truth for every merged entry.
        for entry in truth:
            if entry.split is None:
                fragments = [entry.text]
            else:
                fragments = list(_split_text(entry.text))
            for position, fragment in enumerate(fragments):
                verdict = "1" if position == len(fragments) - 1 else "0"
                prompt = render_repair_prompt(variant, fragment)
                fixtures[request_digest(model_cheap, prompt, None)] = verdict
            prompt = render_variables_prompt(variant, entry.text)
            payload = {
                "patent_id": entry.fields.patent_id,
                "name": entry.fields.assignee,
                "location": entry.fields.location,
                "description": entry.fields.title,
                "date": entry.fields.date,
            }
            fixtures[request_digest(model_cheap, prompt, None)] = json.dumps(
                payload, ensure_ascii=False
            )

        manifest = {
            "volume_key": volume_key,
            "year_label": volume_key,
            "layout_variant": variant.value,
            "has_location": variant is not LayoutVariant.TERMINAL_ID,
            "id_range": {"first": id_range[0], "last": id_range[1]},
            "pages": page_refs,
        }
        manifest_dir = root / "manifests"
        manifest_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = manifest_dir / f"{volume_key}.json"
        manifest_path.write_text(
            json.dumps(manifest, ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
        )
        volumes.append(
            SyntheticVolume(
                volume_key=volume_key,
                manifest_path=manifest_path,
                truth=truth,
                expected_flags=expected,
                page_payloads=pages,
            )
        )

    fixtures_path = root / "fixtures.json"
    fixtures_path.write_text(
        json.dumps(fixtures, ensure_ascii=False, indent=0) + "\n", encoding="utf-8"
    )

    global_id = 0
    for volume in sorted(volumes, key=lambda vol: vol.volume_key):
        for book_id, entry in enumerate(volume.truth, start=1):
            global_id += 1
            perfect_rows.append(
                [
                    global_id,
                    volume.volume_key,
                    book_id,
                    entry.page_first,
                    entry.text,
                    entry.category,
                    entry.fields.patent_id,
                    entry.fields.assignee,
                    entry.fields.location,
                    entry.fields.title,
                    entry.fields.date,
                ]
            )
    perfect_csv = root / "perfect.csv"
    with perfect_csv.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(MERGED_CSV_HEADER)
        writer.writerows(perfect_rows)

    return SyntheticCorpus(
        root=root, volumes=volumes, fixtures_path=fixtures_path, perfect_csv=perfect_csv
    )
