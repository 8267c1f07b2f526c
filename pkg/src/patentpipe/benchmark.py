"""Evaluation harness: edit distance, CER, fuzzy matching, stage reports.

Distances run over raw Unicode scalar values with no normalization, so
historical characters (the long s in particular) count like any other.
Edit counts follow the OCR convention of transforming the reference into
the candidate: a deletion is a reference character the candidate
dropped, an insertion is a candidate character with no counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

from .variables import FIELD_NAMES, SENTINEL, PatentFields

MATCH_THRESHOLD = 0.90


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    deletions: int
    insertions: int
    reference_length: int

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def _trim_common(candidate: str, reference: str) -> tuple[str, str]:
    """Strip shared prefix and suffix; they contribute no edits."""
    start = 0
    limit = min(len(candidate), len(reference))
    while start < limit and candidate[start] == reference[start]:
        start += 1
    end_c, end_r = len(candidate), len(reference)
    while end_c > start and end_r > start and candidate[end_c - 1] == reference[end_r - 1]:
        end_c -= 1
        end_r -= 1
    return candidate[start:end_c], reference[start:end_r]


def levenshtein_distance(candidate: str, reference: str) -> int:
    """Unit-cost edit distance, two-row dynamic program."""
    a, b = _trim_common(candidate, reference)
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current[j] = min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
        previous = current
    return previous[-1]


def levenshtein(candidate: str, reference: str) -> tuple[int, EditCounts]:
    """Edit distance plus substitution/deletion/insertion counts.

    The counts come from one optimal backtrace of the full matrix;
    S + D + I always equals the distance.
    """
    a, b = _trim_common(candidate, reference)
    n, m = len(a), len(b)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dp[i][0] = i
    for j in range(m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        row, prev_row = dp[i], dp[i - 1]
        ca = a[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ca == b[j - 1] else 1
            row[j] = min(prev_row[j] + 1, row[j - 1] + 1, prev_row[j - 1] + cost)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + (0 if a[i - 1] == b[j - 1] else 1):
            if a[i - 1] != b[j - 1]:
                subs += 1
            i -= 1
            j -= 1
        elif j > 0 and dp[i][j] == dp[i][j - 1] + 1:
            # reference character with no counterpart in candidate
            dels += 1
            j -= 1
        else:
            # candidate character with no counterpart in reference
            ins += 1
            i -= 1
    distance = dp[n][m]
    return distance, EditCounts(
        substitutions=subs,
        deletions=dels,
        insertions=ins,
        reference_length=len(reference),
    )


def bounded_distance(candidate: str, reference: str, limit: int) -> int | None:
    """Edit distance if it does not exceed ``limit``, else None.

    Banded dynamic program, O(len * limit); agrees exactly with
    levenshtein_distance whenever it returns a value.
    """
    if limit < 0:
        return None
    a, b = _trim_common(candidate, reference)
    n, m = len(a), len(b)
    if abs(n - m) > limit:
        return None
    if n == 0:
        return m
    if m == 0:
        return n
    big = limit + 1
    previous = [min(j, big) for j in range(m + 1)]
    for i in range(1, n + 1):
        lo = max(1, i - limit)
        hi = min(m, i + limit)
        current = [big] * (m + 1)
        current[0] = i if i <= limit else big
        ca = a[i - 1]
        row_min = current[0]
        for j in range(lo, hi + 1):
            cost = 0 if ca == b[j - 1] else 1
            value = min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
            current[j] = value if value < big else big
            if current[j] < row_min:
                row_min = current[j]
        if row_min >= big:
            return None
        previous = current
    return previous[m] if previous[m] <= limit else None


def _distance_limit(threshold: float, longest: int) -> int:
    """Largest distance d with 1 - d/longest >= threshold, in float semantics."""
    limit = int((1.0 - threshold) * longest) + 1
    while limit > 0 and 1.0 - limit / longest < threshold:
        limit -= 1
    return limit


class EmptyReference(ValueError):
    pass


def cer(candidate: str, reference: str) -> float:
    """Character error rate: edit distance over reference length; may exceed 1."""
    if not reference:
        raise EmptyReference("reference text is empty")
    return levenshtein_distance(candidate, reference) / len(reference)


def similarity(a: str, b: str) -> float:
    """Normalized Levenshtein similarity: 1 - distance / max length, 1.0 for two empties."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein_distance(a, b) / longest


def format_pct(numerator: int, denominator: int) -> str:
    """Percentage with two decimals, rounding half up, e.g. '98.19%'."""
    if denominator == 0:
        return "0.00%" if numerator == 0 else "inf%"
    pct = Decimal(numerator) / Decimal(denominator) * 100
    return f"{pct.quantize(Decimal('0.01'), rounding=ROUND_HALF_UP)}%"


@dataclass(frozen=True)
class MatchReport:
    perfect_count: int
    extracted_count: int
    matched_count: int
    pairs: tuple[tuple[int, int, float], ...] = ()  # (extracted_index, perfect_index, similarity)
    unmatched_extracted: tuple[int, ...] = ()
    unmatched_perfect: tuple[int, ...] = ()

    @property
    def recall(self) -> float:
        """Share of perfect entries with a matched counterpart."""
        return self.matched_count / self.perfect_count if self.perfect_count else 0.0

    @property
    def precision(self) -> float:
        """Share of extracted entries with a matched counterpart."""
        return self.matched_count / self.extracted_count if self.extracted_count else 0.0

    @classmethod
    def from_counts(cls, perfect: int, extracted: int, matched: int) -> "MatchReport":
        """Report arithmetic on given counts, without pair detail."""
        return cls(perfect_count=perfect, extracted_count=extracted, matched_count=matched)

    def as_dict(self) -> dict:
        return {
            "perfect_entries": self.perfect_count,
            "extracted_entries": self.extracted_count,
            "matched_entries": self.matched_count,
            "recall": self.recall,
            "precision": self.precision,
            "pct_perfect_matched": format_pct(self.matched_count, self.perfect_count),
            "pct_extracted_matched": format_pct(self.matched_count, self.extracted_count),
        }


def greedy_match(
    extracted: Sequence[str],
    perfect: Sequence[str],
    threshold: float = MATCH_THRESHOLD,
    order: str = "similarity",
) -> MatchReport:
    """Greedy one-to-one fuzzy matching at the given similarity threshold.

    All cross pairs are scored; pairs are admitted in descending
    similarity (ties by lower extracted index, then lower perfect index),
    each index used at most once, only pairs at or above the threshold.
    ``order="document"`` instead walks extracted entries in document
    order, giving each the best still-available counterpart.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    if order not in ("similarity", "document"):
        raise ValueError(f"order must be 'similarity' or 'document', got {order!r}")

    scored: list[tuple[float, int, int]] = []
    for i, cand in enumerate(extracted):
        for j, ref in enumerate(perfect):
            longest = max(len(cand), len(ref))
            if longest == 0:
                scored.append((1.0, i, j))
                continue
            distance = bounded_distance(cand, ref, _distance_limit(threshold, longest))
            if distance is None:
                continue
            sim = 1.0 - distance / longest
            if sim >= threshold:
                scored.append((sim, i, j))

    pairs: list[tuple[int, int, float]] = []
    used_extracted: set[int] = set()
    used_perfect: set[int] = set()
    if order == "similarity":
        scored.sort(key=lambda t: (-t[0], t[1], t[2]))
        for sim, i, j in scored:
            if i in used_extracted or j in used_perfect:
                continue
            pairs.append((i, j, sim))
            used_extracted.add(i)
            used_perfect.add(j)
    else:
        best: dict[int, list[tuple[float, int]]] = {}
        for sim, i, j in scored:
            best.setdefault(i, []).append((sim, j))
        for i in range(len(extracted)):
            for sim, j in sorted(best.get(i, []), key=lambda t: (-t[0], t[1])):
                if j not in used_perfect:
                    pairs.append((i, j, sim))
                    used_extracted.add(i)
                    used_perfect.add(j)
                    break

    return MatchReport(
        perfect_count=len(perfect),
        extracted_count=len(extracted),
        matched_count=len(pairs),
        pairs=tuple(pairs),
        unmatched_extracted=tuple(i for i in range(len(extracted)) if i not in used_extracted),
        unmatched_perfect=tuple(j for j in range(len(perfect)) if j not in used_perfect),
    )


@dataclass(frozen=True)
class VariableReport:
    per_variable: dict[str, tuple[int, int]] = field(default_factory=dict)  # name -> (total, matched)

    @property
    def total_cells(self) -> int:
        return sum(total for total, _ in self.per_variable.values())

    @property
    def matched_cells(self) -> int:
        return sum(matched for _, matched in self.per_variable.values())

    def rate(self, name: str) -> float:
        total, matched = self.per_variable[name]
        return matched / total if total else 0.0

    def as_dict(self) -> dict:
        by_variable = {
            name: {
                "total": total,
                "matched": matched,
                "match_rate": format_pct(matched, total),
            }
            for name, (total, matched) in self.per_variable.items()
        }
        return {
            "total_cells": self.total_cells,
            "matched_cells": self.matched_cells,
            "match_rate": format_pct(self.matched_cells, self.total_cells),
            "by_variable": by_variable,
        }


def cells_match(candidate: str, reference: str, threshold: float = MATCH_THRESHOLD) -> bool:
    """Two cells match when both are the sentinel or both meet the similarity bar."""
    if candidate == SENTINEL or reference == SENTINEL:
        return candidate == reference
    return similarity(candidate, reference) >= threshold


def stage2_report(
    pairs: Sequence[tuple[int, int, float]],
    candidate_fields: Sequence[PatentFields],
    perfect_fields: Sequence[PatentFields],
    threshold: float = MATCH_THRESHOLD,
) -> VariableReport:
    """Per-variable match rates over the entry pairs matched in Stage I."""
    counts = {name: [0, 0] for name in FIELD_NAMES}
    for extracted_index, perfect_index, _ in pairs:
        cand = candidate_fields[extracted_index]
        ref = perfect_fields[perfect_index]
        for name in FIELD_NAMES:
            counts[name][0] += 1
            if cells_match(getattr(cand, name), getattr(ref, name), threshold):
                counts[name][1] += 1
    return VariableReport(per_variable={name: (t, m) for name, (t, m) in counts.items()})


def concat_entries(entries: Sequence[str]) -> str:
    """Volume text for CER: each entry terminated by a single newline."""
    return "".join(entry + "\n" for entry in entries)


def cer_by_volume(
    candidate: Mapping[str, Sequence[str]], perfect: Mapping[str, Sequence[str]]
) -> dict[str, float]:
    """Per-volume CER over concatenated entry transcriptions."""
    out: dict[str, float] = {}
    for volume_key in sorted(perfect):
        reference = concat_entries(perfect[volume_key])
        if not reference:
            raise EmptyReference(f"volume {volume_key} has no reference entries")
        out[volume_key] = cer(concat_entries(candidate.get(volume_key, ())), reference)
    return out


def write_side_by_side(
    path: str | Path,
    extracted: Sequence[str],
    perfect: Sequence[str],
    report: MatchReport,
    width: int = 60,
) -> None:
    """Two-column plain-text diff of matched and unmatched entries."""
    def clip(text: str) -> str:
        return text if len(text) <= width else text[: width - 1] + "…"

    lines = [f"{'EXTRACTED':<{width}} | PERFECT"]
    lines.append("-" * (width * 2 + 3))
    for i, j, sim in report.pairs:
        marker = " " if sim == 1.0 else "~"
        lines.append(f"{clip(extracted[i]):<{width}} {marker} {clip(perfect[j])}")
    for i in report.unmatched_extracted:
        lines.append(f"{clip(extracted[i]):<{width}} < (no match)")
    for j in report.unmatched_perfect:
        lines.append(f"{'(no match)':<{width}} > {clip(perfect[j])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
