"""Stage drivers: run each pipeline stage against an output directory.

Artifact layout under the output root:

    pages/{volume_key}/{page_index:05}.json   per-page items + usage
    extracted/{volume_key}.csv                page,entry,category,source_order
    repaired/{volume_key}.csv|.json           repaired rows (+ terminal truncations)
    records/{volume_key}.json                 full-fidelity Stage II records
    dataset/{volume_key}.csv                  per-volume dataset export
    validated/{volume_key}.json               post-exclusion records (review edits land here)
    flags/{volume_key}.jsonl                  append-only flag events
    merged.csv                                final multi-volume dataset
    reports/benchmark.json, cost.json|txt     evaluation and cost reports
    usage.jsonl                               token usage ledger
    state/{stage}.{volume_key}.json           stage fingerprints for no-op re-runs

All files are written atomically (temp + rename). A completed stage
with unchanged inputs is skipped unless forced.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from . import benchmark as bench
from .corpus import load_manifest
from .costing import PriceSheet, Stage, UsageLedger, cost_report
from .extraction import (
    PageExtraction,
    RawRow,
    assemble_volume,
    extract_volume,
    parse_model_payload,
    read_rows_csv,
    serialize_items,
    write_rows_csv,
)
from .gateway import Gateway, GatewayError, RetryPolicy, TokenUsage
from .repair import (
    classify_volume,
    merge_truncated,
    read_repaired_csv,
    write_repaired_csv,
)
from .validation import (
    FlagStore,
    apply_exclusions,
    collect_flags,
    merge_volumes,
    write_merged_csv,
)
from .variables import (
    PatentFields,
    PatentRecord,
    extract_fields_volume,
    read_records_json,
    write_dataset_csv,
    write_records_json,
)

log = logging.getLogger(__name__)


class MissingPrerequisite(RuntimeError):
    """An earlier stage's artifacts are required but absent."""


@dataclass
class StageConfig:
    out_dir: Path
    model_extract: str = "pro"
    model_cheap: str = "lite"
    max_in_flight: int = 8
    page_policy: RetryPolicy = RetryPolicy(max_attempts=25)
    entry_policy: RetryPolicy = RetryPolicy(max_attempts=10)
    threshold: float = bench.MATCH_THRESHOLD
    strict_json: bool = False
    force: bool = False


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write(path: Path, writer: Callable[[Path], None]) -> None:
    """Run a path-taking writer against a temp file, then rename into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{path.name}.tmp{os.getpid()}"
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise


def _fingerprint(parts: Sequence[object]) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, Path):
            h.update(hashlib.sha256(part.read_bytes()).digest())
        else:
            h.update(json.dumps(part, sort_keys=True, default=str).encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def _stage_state_path(cfg: StageConfig, stage: str, volume_key: str) -> Path:
    return cfg.out_dir / "state" / f"{stage}.{volume_key}.json"


def _stage_is_current(
    cfg: StageConfig, stage: str, volume_key: str, fingerprint: str, outputs: Sequence[Path]
) -> bool:
    if cfg.force:
        return False
    state_path = _stage_state_path(cfg, stage, volume_key)
    if not state_path.is_file() or not all(p.exists() for p in outputs):
        return False
    try:
        state = json.loads(state_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    return state.get("fingerprint") == fingerprint


def _mark_stage_done(cfg: StageConfig, stage: str, volume_key: str, fingerprint: str) -> None:
    atomic_write_text(
        _stage_state_path(cfg, stage, volume_key),
        json.dumps({"fingerprint": fingerprint}) + "\n",
    )


def _ledger_path(cfg: StageConfig) -> Path:
    return cfg.out_dir / "usage.jsonl"


def _flush_usage(cfg: StageConfig, ledger: UsageLedger) -> None:
    _ledger_path(cfg).parent.mkdir(parents=True, exist_ok=True)
    ledger.append_to(_ledger_path(cfg))


def _manifest_fingerprint(manifest_path: Path, cfg: StageConfig, *extra: object) -> str:
    return _fingerprint(
        [manifest_path, cfg.model_extract, cfg.model_cheap, cfg.strict_json, *extra]
    )


def run_extract(manifest_path: Path, gateway: Gateway, cfg: StageConfig) -> Path:
    """Stage I part 1: per-page extraction with per-page checkpoint files.

    Pages already present under pages/{volume}/ are not re-sent, so an
    interrupted run resumes where it stopped. Fails if any page still
    has no valid payload after the retry policy is exhausted.
    """
    manifest = load_manifest(manifest_path)
    out_csv = cfg.out_dir / "extracted" / f"{manifest.volume_key}.csv"
    fingerprint = _manifest_fingerprint(manifest_path, cfg)
    if _stage_is_current(cfg, "extract", manifest.volume_key, fingerprint, [out_csv]):
        log.info("extract %s: up to date", manifest.volume_key)
        return out_csv

    pages_dir = cfg.out_dir / "pages" / manifest.volume_key
    pages_dir.mkdir(parents=True, exist_ok=True)
    done = {int(p.stem) for p in pages_dir.glob("*.json")} if not cfg.force else set()
    pending = [p.page_index for p in manifest.pages if p.page_index not in done]

    if pending:
        ledger = UsageLedger()
        results = extract_volume(
            manifest,
            gateway,
            policy=cfg.page_policy,
            model_id=cfg.model_extract,
            max_in_flight=cfg.max_in_flight,
            strict=cfg.strict_json,
            only_pages=pending,
            usage_callback=lambda r: ledger.record(
                Stage.EXTRACTION, cfg.model_extract, r.usage, attempt=r.attempt_count
            ),
        )
        failures: list[tuple[int, GatewayError]] = []
        for page_index, result in zip(pending, results):
            if isinstance(result, GatewayError):
                failures.append((page_index, result))
                continue
            payload = {
                "page_index": result.page_index,
                "items": json.loads(serialize_items(result.items)),
                "usage": {
                    "input_tokens": result.usage.input_tokens,
                    "output_tokens": result.usage.output_tokens,
                },
            }
            atomic_write_text(
                pages_dir / f"{page_index:05}.json",
                json.dumps(payload, ensure_ascii=False, indent=1) + "\n",
            )
        _flush_usage(cfg, ledger)
        if failures:
            details = "; ".join(f"page {p}: {e}" for p, e in failures)
            raise RuntimeError(
                f"volume {manifest.volume_key}: {len(failures)} pages failed ({details}); "
                "re-run to retry the missing pages"
            )

    extractions = []
    for ref in manifest.pages:
        payload = json.loads(
            (pages_dir / f"{ref.page_index:05}.json").read_text(encoding="utf-8")
        )
        items = parse_model_payload(json.dumps(payload["items"], ensure_ascii=False))
        if not items:
            log.info(
                "volume %s: page %d yielded zero items (blank page?)",
                manifest.volume_key,
                ref.page_index,
            )
        extractions.append(
            PageExtraction(
                page_index=payload["page_index"],
                items=tuple(items),
                usage=TokenUsage(**payload["usage"]),
            )
        )
    rows, _ = assemble_volume(extractions)
    for row in rows:
        if row.category is None:
            log.info(
                "volume %s: row %d precedes the first category heading",
                manifest.volume_key,
                row.source_order,
            )
    atomic_write(out_csv, lambda tmp: write_rows_csv(rows, tmp))
    _mark_stage_done(cfg, "extract", manifest.volume_key, fingerprint)
    return out_csv


def run_repair(manifest_path: Path, gateway: Gateway, cfg: StageConfig) -> Path:
    """Stage I part 2: classify truncation per row and merge runs."""
    manifest = load_manifest(manifest_path)
    in_csv = cfg.out_dir / "extracted" / f"{manifest.volume_key}.csv"
    if not in_csv.is_file():
        raise MissingPrerequisite(f"run extract first: {in_csv} missing")
    out_csv = cfg.out_dir / "repaired" / f"{manifest.volume_key}.csv"
    out_meta = cfg.out_dir / "repaired" / f"{manifest.volume_key}.json"
    fingerprint = _manifest_fingerprint(manifest_path, cfg, in_csv)
    if _stage_is_current(cfg, "repair", manifest.volume_key, fingerprint, [out_csv, out_meta]):
        log.info("repair %s: up to date", manifest.volume_key)
        return out_csv

    rows = read_rows_csv(in_csv)
    ledger = UsageLedger()
    verdicts = classify_volume(
        rows,
        gateway,
        policy=cfg.entry_policy,
        model_id=cfg.model_cheap,
        variant=manifest.layout_variant,
        max_in_flight=cfg.max_in_flight,
        usage_callback=lambda r: ledger.record(
            Stage.REPARATION, cfg.model_cheap, r.usage, attempt=r.attempt_count
        ),
    )
    _flush_usage(cfg, ledger)
    repaired, terminal = merge_truncated(rows, verdicts)
    atomic_write(out_csv, lambda tmp: write_repaired_csv(repaired, tmp))
    atomic_write_text(
        out_meta,
        json.dumps({"terminal_truncations": terminal}) + "\n",
    )
    _mark_stage_done(cfg, "repair", manifest.volume_key, fingerprint)
    return out_csv


def run_variables(manifest_path: Path, gateway: Gateway, cfg: StageConfig) -> Path:
    """Stage II: extract the five variables for every repaired row."""
    manifest = load_manifest(manifest_path)
    in_csv = cfg.out_dir / "repaired" / f"{manifest.volume_key}.csv"
    if not in_csv.is_file():
        raise MissingPrerequisite(f"run repair first: {in_csv} missing")
    out_json = cfg.out_dir / "records" / f"{manifest.volume_key}.json"
    out_csv = cfg.out_dir / "dataset" / f"{manifest.volume_key}.csv"
    fingerprint = _manifest_fingerprint(manifest_path, cfg, in_csv)
    if _stage_is_current(cfg, "variables", manifest.volume_key, fingerprint, [out_json, out_csv]):
        log.info("variables %s: up to date", manifest.volume_key)
        return out_csv

    rows = read_repaired_csv(in_csv)
    ledger = UsageLedger()
    records = extract_fields_volume(
        rows,
        gateway,
        policy=cfg.entry_policy,
        model_id=cfg.model_cheap,
        variant=manifest.layout_variant,
        volume_key=manifest.volume_key,
        max_in_flight=cfg.max_in_flight,
        strict=cfg.strict_json,
        usage_callback=lambda r: ledger.record(
            Stage.VARIABLE_EXTRACTION, cfg.model_cheap, r.usage, attempt=r.attempt_count
        ),
    )
    _flush_usage(cfg, ledger)
    atomic_write(out_json, lambda tmp: write_records_json(records, tmp))
    atomic_write(out_csv, lambda tmp: write_dataset_csv(records, tmp))
    _mark_stage_done(cfg, "variables", manifest.volume_key, fingerprint)
    return out_csv


def run_validate(manifest_path: Path, cfg: StageConfig) -> Path:
    """Structural validation: exclusions, flag emission, validated records.

    Skipping on unchanged inputs matters here: validated/*.json is where
    review edits land, and re-running must not clobber them.
    """
    manifest = load_manifest(manifest_path)
    in_json = cfg.out_dir / "records" / f"{manifest.volume_key}.json"
    meta_path = cfg.out_dir / "repaired" / f"{manifest.volume_key}.json"
    if not in_json.is_file():
        raise MissingPrerequisite(f"run variables first: {in_json} missing")
    out_json = cfg.out_dir / "validated" / f"{manifest.volume_key}.json"
    fingerprint = _manifest_fingerprint(manifest_path, cfg, in_json)
    if _stage_is_current(cfg, "validate", manifest.volume_key, fingerprint, [out_json]):
        log.info("validate %s: up to date", manifest.volume_key)
        return out_json

    records = read_records_json(in_json)
    kept, removed = apply_exclusions(records, manifest)
    terminal: list[int] = []
    if meta_path.is_file():
        terminal = json.loads(meta_path.read_text(encoding="utf-8")).get(
            "terminal_truncations", []
        )
    flags = collect_flags(kept, manifest, terminal)
    store = FlagStore(cfg.out_dir / "flags")
    added = store.emit(flags)
    log.info(
        "volume %s: %d records kept (%d excluded), %d flags (%d new)",
        manifest.volume_key,
        len(kept),
        removed,
        len(flags),
        added,
    )
    atomic_write(out_json, lambda tmp: write_records_json(kept, tmp))
    _mark_stage_done(cfg, "validate", manifest.volume_key, fingerprint)
    return out_json


def run_merge(cfg: StageConfig) -> Path:
    """Concatenate all validated volumes into the merged dataset."""
    validated_dir = cfg.out_dir / "validated"
    volume_files = sorted(validated_dir.glob("*.json"))
    if not volume_files:
        raise MissingPrerequisite(f"run validate first: no files under {validated_dir}")
    volumes = [(path.stem, read_records_json(path)) for path in volume_files]
    merged = merge_volumes(volumes)
    out_csv = cfg.out_dir / "merged.csv"
    atomic_write(out_csv, lambda tmp: write_merged_csv(merged, tmp))
    return out_csv


def _dataset_by_volume(path: Path) -> dict[str, list[dict]]:
    import csv as _csv

    volumes: dict[str, list[dict]] = {}
    with path.open(newline="", encoding="utf-8") as handle:
        for row in _csv.DictReader(handle):
            volumes.setdefault(row["book"], []).append(row)
    return volumes


def run_bench(candidate_csv: Path, perfect_csv: Path, cfg: StageConfig) -> Path:
    """Benchmark a merged dataset against a reference in the same schema.

    Matching and CER run per volume; Stage II rates aggregate over all
    matched pairs. Writes reports/benchmark.json plus one side-by-side
    diff per volume.
    """
    for path in (candidate_csv, perfect_csv):
        if not path.is_file():
            raise MissingPrerequisite(f"dataset missing: {path}")
    candidate = _dataset_by_volume(candidate_csv)
    perfect = _dataset_by_volume(perfect_csv)

    def fields_of(row: dict) -> PatentFields:
        return PatentFields(
            patent_id=row["patent_id"],
            assignee=row["assignee"],
            location=row["location"],
            title=row["title"],
            date=row["date"],
        )

    per_volume: dict[str, dict] = {}
    total_perfect = total_extracted = total_matched = 0
    merged_variable_counts = {name: [0, 0] for name in bench.FIELD_NAMES}
    cer_values: dict[str, float] = {}
    diffs_dir = cfg.out_dir / "reports" / "diffs"

    for volume_key in sorted(perfect):
        cand_rows = candidate.get(volume_key, [])
        perf_rows = perfect[volume_key]
        cand_entries = [row["entry"] for row in cand_rows]
        perf_entries = [row["entry"] for row in perf_rows]
        report = bench.greedy_match(cand_entries, perf_entries, cfg.threshold)
        variable_report = bench.stage2_report(
            report.pairs,
            [fields_of(row) for row in cand_rows],
            [fields_of(row) for row in perf_rows],
            cfg.threshold,
        )
        cer_values[volume_key] = bench.cer_by_volume(
            {volume_key: cand_entries}, {volume_key: perf_entries}
        )[volume_key]
        total_perfect += report.perfect_count
        total_extracted += report.extracted_count
        total_matched += report.matched_count
        for name, (t, m) in variable_report.per_variable.items():
            merged_variable_counts[name][0] += t
            merged_variable_counts[name][1] += m
        per_volume[volume_key] = {
            "matching": report.as_dict(),
            "variables": variable_report.as_dict(),
            "cer": cer_values[volume_key],
        }
        diffs_dir.mkdir(parents=True, exist_ok=True)
        atomic_write(
            diffs_dir / f"{volume_key}.txt",
            lambda tmp, e=cand_entries, p=perf_entries, r=report: bench.write_side_by_side(
                tmp, e, p, r
            ),
        )

    overall_matching = bench.MatchReport.from_counts(
        total_perfect, total_extracted, total_matched
    )
    overall_variables = bench.VariableReport(
        per_variable={name: (t, m) for name, (t, m) in merged_variable_counts.items()}
    )
    payload = {
        "threshold": cfg.threshold,
        "matching": overall_matching.as_dict(),
        "variables": overall_variables.as_dict(),
        "cer_by_volume": cer_values,
        "volumes": per_volume,
    }
    out_path = cfg.out_dir / "reports" / "benchmark.json"
    atomic_write_text(out_path, json.dumps(payload, ensure_ascii=False, indent=1) + "\n")
    return out_path


def run_cost(prices_path: Path, cfg: StageConfig, batch: bool = False) -> Path:
    """Fold the usage ledger into reports/cost.json and cost.txt."""
    ledger_path = _ledger_path(cfg)
    if not ledger_path.is_file():
        raise MissingPrerequisite(f"no usage ledger at {ledger_path}; run the pipeline first")
    ledger = UsageLedger.load(ledger_path)
    prices = PriceSheet.from_file(prices_path)
    report = cost_report(ledger, prices, batch=batch)
    out_json = cfg.out_dir / "reports" / "cost.json"
    atomic_write_text(out_json, json.dumps(report.as_dict(), indent=1) + "\n")
    atomic_write_text(cfg.out_dir / "reports" / "cost.txt", report.render_text())
    return out_json
