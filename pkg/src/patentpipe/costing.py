"""Token usage ledger and cost accounting.

Every gateway call that succeeds lands in the ledger with its stage and
model; the report folds the ledger against a price sheet (currency
units per million tokens). Thinking tokens are already folded into
output counts upstream, so they are never tracked separately. Batch
pricing is modelled as a flat discount on the total, off by default.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Iterable

from .gateway import TokenUsage


class Stage(str, Enum):
    EXTRACTION = "extraction"
    REPARATION = "reparation"
    VARIABLE_EXTRACTION = "variable_extraction"


class UnpricedModel(KeyError):
    pass


@dataclass(frozen=True)
class ModelPrice:
    input_per_1m: float
    output_per_1m: float

    def __post_init__(self) -> None:
        if self.input_per_1m < 0 or self.output_per_1m < 0:
            raise ValueError("prices must be non-negative")


@dataclass(frozen=True)
class PriceSheet:
    prices: dict[str, ModelPrice]
    batch_discount: float = 0.5

    def price(self, model_id: str) -> ModelPrice:
        try:
            return self.prices[model_id]
        except KeyError:
            raise UnpricedModel(model_id) from None

    @classmethod
    def from_file(cls, path: str | Path) -> "PriceSheet":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        discount = raw.pop("batch_discount", 0.5)
        prices = {
            model_id: ModelPrice(
                input_per_1m=entry["input_per_1m"], output_per_1m=entry["output_per_1m"]
            )
            for model_id, entry in raw.items()
        }
        return cls(prices=prices, batch_discount=discount)


@dataclass(frozen=True)
class LedgerEntry:
    stage: Stage
    model_id: str
    input_tokens: int
    output_tokens: int
    attempt: int = 1  # which attempt produced the usage block

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")


class UsageLedger:
    """Append-only, thread-safe record of token usage."""

    def __init__(self, entries: Iterable[LedgerEntry] = ()) -> None:
        self._entries: list[LedgerEntry] = list(entries)
        self._lock = threading.Lock()

    def record(
        self, stage: Stage, model_id: str, usage: TokenUsage, attempt: int = 1
    ) -> LedgerEntry:
        entry = LedgerEntry(
            stage=stage,
            model_id=model_id,
            input_tokens=usage.input_tokens,
            output_tokens=usage.output_tokens,
            attempt=attempt,
        )
        with self._lock:
            self._entries.append(entry)
        return entry

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def total_usage(self) -> TokenUsage:
        total = TokenUsage()
        for entry in self.entries:
            total = total + TokenUsage(entry.input_tokens, entry.output_tokens)
        return total

    def _write(self, path: str | Path, mode: str) -> None:
        with Path(path).open(mode, encoding="utf-8") as handle:
            for entry in self.entries:
                handle.write(
                    json.dumps(
                        {
                            "stage": entry.stage.value,
                            "model_id": entry.model_id,
                            "input_tokens": entry.input_tokens,
                            "output_tokens": entry.output_tokens,
                            "attempt": entry.attempt,
                        }
                    )
                    + "\n"
                )

    def save(self, path: str | Path) -> None:
        self._write(path, "w")

    def append_to(self, path: str | Path) -> None:
        self._write(path, "a")

    @classmethod
    def load(cls, path: str | Path) -> "UsageLedger":
        entries = []
        with Path(path).open(encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                raw = json.loads(line)
                entries.append(
                    LedgerEntry(
                        stage=Stage(raw["stage"]),
                        model_id=raw["model_id"],
                        input_tokens=raw["input_tokens"],
                        output_tokens=raw["output_tokens"],
                        attempt=raw.get("attempt", 1),
                    )
                )
        return cls(entries)


def record_usage(
    ledger: UsageLedger, stage: Stage, model_id: str, usage: TokenUsage, attempt: int = 1
) -> LedgerEntry:
    return ledger.record(stage, model_id, usage, attempt)


@dataclass(frozen=True)
class StageCost:
    stage: Stage
    model_id: str
    input_tokens: int
    output_tokens: int
    cost: float


@dataclass(frozen=True)
class CostReport:
    rows: tuple[StageCost, ...]
    batch: bool
    batch_discount: float

    @property
    def total_cost(self) -> float:
        return sum(row.cost for row in self.rows)

    def share(self, row: StageCost) -> float:
        total = self.total_cost
        return row.cost / total if total else 0.0

    def as_dict(self) -> dict:
        total = self.total_cost
        return {
            "batch": self.batch,
            "batch_discount": self.batch_discount if self.batch else 0.0,
            "stages": [
                {
                    "stage": row.stage.value,
                    "model": row.model_id,
                    "input_tokens": row.input_tokens,
                    "output_tokens": row.output_tokens,
                    "cost": round(row.cost, 2),
                    "share_pct": round(100 * self.share(row), 1),
                }
                for row in self.rows
            ],
            "total": {
                "input_tokens": sum(r.input_tokens for r in self.rows),
                "output_tokens": sum(r.output_tokens for r in self.rows),
                "cost": round(total, 2),
            },
        }

    def render_text(self) -> str:
        def money(value: float) -> str:
            return f"{Decimal(value).quantize(Decimal('0.01'), rounding=ROUND_HALF_UP):,}"

        def millions(tokens: int) -> str:
            return f"{tokens / 1e6:,.1f}M"

        header = f"{'Stage':<22}{'Model':<18}{'Input':>10}{'Output':>10}{'Cost':>12}{'%':>8}"
        lines = [header, "-" * len(header)]
        for row in self.rows:
            lines.append(
                f"{row.stage.value:<22}{row.model_id:<18}"
                f"{millions(row.input_tokens):>10}{millions(row.output_tokens):>10}"
                f"{money(row.cost):>12}{100 * self.share(row):>7.1f}%"
            )
        lines.append("-" * len(header))
        total_in = sum(r.input_tokens for r in self.rows)
        total_out = sum(r.output_tokens for r in self.rows)
        lines.append(
            f"{'Total':<22}{'':<18}{millions(total_in):>10}{millions(total_out):>10}"
            f"{money(self.total_cost):>12}{'100.0%':>8}"
        )
        if self.batch:
            lines.append(f"(batch pricing applied: {self.batch_discount:.0%} discount)")
        return "\n".join(lines) + "\n"


def cost_report(ledger: UsageLedger, prices: PriceSheet, batch: bool = False) -> CostReport:
    """Fold the ledger into per-stage costs; cost is linear in token counts."""
    aggregates: dict[tuple[Stage, str], list[int]] = {}
    order: list[tuple[Stage, str]] = []
    for entry in ledger.entries:
        key = (entry.stage, entry.model_id)
        if key not in aggregates:
            aggregates[key] = [0, 0]
            order.append(key)
        aggregates[key][0] += entry.input_tokens
        aggregates[key][1] += entry.output_tokens

    factor = (1.0 - prices.batch_discount) if batch else 1.0
    rows = []
    for key in order:
        stage, model_id = key
        input_tokens, output_tokens = aggregates[key]
        price = prices.price(model_id)
        cost = factor * (
            input_tokens / 1e6 * price.input_per_1m + output_tokens / 1e6 * price.output_per_1m
        )
        rows.append(
            StageCost(
                stage=stage,
                model_id=model_id,
                input_tokens=input_tokens,
                output_tokens=output_tokens,
                cost=cost,
            )
        )
    return CostReport(rows=tuple(rows), batch=batch, batch_discount=prices.batch_discount)
