"""HTTP backend for the flagged-entry review queue.

Every dataset mutation goes through a flag resolution and leaves an
audit event in the flag store's event log; replaying that log over the
pre-review dataset reproduces the post-review dataset byte for byte.
The service assumes a single operator (last write wins) and serializes
writes through the flag store.
"""

from __future__ import annotations

import threading
import time
from dataclasses import replace
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .corpus import HashMismatch, MissingFile, UnknownPage, load_manifest, resolve_page
from .pipeline import atomic_write
from .validation import FlagStatus, FlagStore, ReviewFlag
from .variables import (
    PatentFields,
    PatentRecord,
    read_records_json,
    record_to_dict,
    write_records_json,
)


class UnknownFlag(KeyError):
    pass


class AlreadyClosed(RuntimeError):
    pass


class ResolutionError(ValueError):
    pass


def _flag_summary(flag: ReviewFlag) -> dict:
    return {
        "flag_id": flag.flag_id,
        "volume_key": flag.volume_key,
        "page": flag.page,
        "row_ref": flag.row_ref,
        "kind": flag.kind.value,
        "detail": flag.detail,
        "status": flag.status.value,
        "resolution": flag.resolution,
    }


def _queue_key(flag: ReviewFlag) -> tuple:
    return (flag.volume_key, flag.page, flag.row_ref, flag.kind.value)


def apply_audit_log(records: list[PatentRecord], events: list[dict]) -> list[PatentRecord]:
    """Replay resolution events over a pre-review record list.

    Only events that mutate the dataset matter: ``resolve`` applies field
    edits, ``delete_row`` removes the row; dismissals change nothing.
    """
    current = list(records)
    for event in events:
        if event.get("event") not in ("resolve", "dismiss"):
            continue
        resolution = event.get("resolution") or {}
        action = resolution.get("action")
        row_ref = resolution.get("row_ref")
        if action == "delete_row":
            current = [rec for rec in current if rec.row_ref != row_ref]
        elif action == "resolve":
            for idx, rec in enumerate(current):
                if rec.row_ref != row_ref:
                    continue
                fields = rec.fields
                if resolution.get("patent_id") is not None:
                    fields = PatentFields(**{**fields.as_dict(), "patent_id": resolution["patent_id"]})
                entry = resolution.get("entry") if resolution.get("entry") is not None else rec.entry
                current[idx] = replace(rec, entry=entry, fields=fields)
                break
    return current


class ReviewService:
    """Queue operations over the flag store and the validated record files."""

    def __init__(self, out_dir: str | Path, manifest_paths: list[Path] | None = None) -> None:
        self.out_dir = Path(out_dir)
        self.store = FlagStore(self.out_dir / "flags")
        self._manifests = {}
        for path in manifest_paths or []:
            manifest = load_manifest(path)
            self._manifests[manifest.volume_key] = manifest
        self._write_lock = threading.Lock()

    # -- flags ---------------------------------------------------------

    def list_flags(
        self, status: str | None = None, kind: str | None = None, volume: str | None = None
    ) -> list[dict]:
        flags = list(self.store.load_all().values())
        if status:
            flags = [f for f in flags if f.status.value == status]
        if kind:
            flags = [f for f in flags if f.kind.value == kind]
        if volume:
            flags = [f for f in flags if f.volume_key == volume]
        flags.sort(key=_queue_key)
        return [_flag_summary(f) for f in flags]

    def _get(self, flag_id: str) -> ReviewFlag:
        volume_key = flag_id.split(":", 1)[0]
        flags = self.store.load(volume_key)
        if flag_id not in flags:
            raise UnknownFlag(flag_id)
        return flags[flag_id]

    def _records_path(self, volume_key: str) -> Path:
        return self.out_dir / "validated" / f"{volume_key}.json"

    def _load_records(self, volume_key: str) -> list[PatentRecord]:
        path = self._records_path(volume_key)
        if not path.is_file():
            raise UnknownFlag(f"no validated records for volume {volume_key}")
        return read_records_json(path)

    def _find_record(self, volume_key: str, row_ref: int) -> PatentRecord | None:
        for rec in self._load_records(volume_key):
            if rec.row_ref == row_ref:
                return rec
        return None

    def get_flag(self, flag_id: str) -> dict:
        """Flag detail plus the current record snapshot and page image references."""
        flag = self._get(flag_id)
        record = self._find_record(flag.volume_key, flag.row_ref)
        images = []
        if record is not None:
            pages = sorted({record.page_first, record.page_last})
            images = [f"/api/pages/{flag.volume_key}/{page}" for page in pages]
        else:
            images = [f"/api/pages/{flag.volume_key}/{flag.page}"]
        detail = _flag_summary(flag)
        detail["record"] = record_to_dict(record) if record is not None else None
        detail["images"] = images
        detail["audit"] = [
            {"timestamp": e.timestamp, "actor": e.actor, "change": e.change} for e in flag.audit
        ]
        return detail

    def next_open_flag(self, after: ReviewFlag | None = None) -> str | None:
        flags = [f for f in self.store.load_all().values() if f.status is FlagStatus.OPEN]
        flags.sort(key=_queue_key)
        if after is not None:
            key = _queue_key(after)
            following = [f for f in flags if _queue_key(f) > key]
            if following:
                return following[0].flag_id
        return flags[0].flag_id if flags else None

    def resolve_flag(
        self,
        flag_id: str,
        action: str,
        entry: str | None = None,
        patent_id: str | None = None,
        note: str | None = None,
        actor: str = "reviewer",
    ) -> dict:
        """Close a flag, applying the edit (or row deletion) to the dataset.

        Edits are only legal with ``action="resolve"``; a dismissal
        leaves the row untouched by definition.
        """
        if action not in ("resolve", "dismiss", "delete_row"):
            raise ResolutionError(f"unknown action {action!r}")
        if patent_id is not None and not patent_id.isdigit():
            raise ResolutionError("patent_id must contain only digits")
        if action in ("dismiss", "delete_row") and (entry is not None or patent_id is not None):
            raise ResolutionError(f"field edits are not allowed with action {action!r}")

        flag = self._get(flag_id)
        if flag.status is not FlagStatus.OPEN:
            raise AlreadyClosed(f"flag {flag_id} is already {flag.status.value}")

        with self._write_lock:
            records = self._load_records(flag.volume_key)
            updated_record: PatentRecord | None = None
            if action == "delete_row":
                remaining = [rec for rec in records if rec.row_ref != flag.row_ref]
                if len(remaining) == len(records):
                    raise ResolutionError(f"no record with row_ref {flag.row_ref}")
                records = remaining
            elif action == "resolve" and (entry is not None or patent_id is not None):
                for idx, rec in enumerate(records):
                    if rec.row_ref != flag.row_ref:
                        continue
                    fields = rec.fields
                    if patent_id is not None:
                        fields = PatentFields(**{**fields.as_dict(), "patent_id": patent_id})
                    records[idx] = replace(
                        rec, entry=entry if entry is not None else rec.entry, fields=fields
                    )
                    updated_record = records[idx]
                    break
                else:
                    raise ResolutionError(f"no record with row_ref {flag.row_ref}")

            resolution = {
                "action": action,
                "row_ref": flag.row_ref,
                "entry": entry,
                "patent_id": patent_id,
                "note": note,
            }
            store_action = "dismiss" if action == "dismiss" else "resolve"
            closed = self.store.close(
                flag_id, store_action, resolution, actor=actor, timestamp=time.time()
            )
            atomic_write(
                self._records_path(flag.volume_key),
                lambda tmp: write_records_json(records, tmp),
            )

        result = _flag_summary(closed)
        result["record"] = record_to_dict(updated_record) if updated_record is not None else None
        result["next_flag_id"] = self.next_open_flag(after=closed)
        return result

    # -- pages and progress ---------------------------------------------

    def page_image(self, volume_key: str, page_index: int) -> tuple[bytes, str]:
        if volume_key not in self._manifests:
            raise UnknownPage(f"no manifest loaded for volume {volume_key}")
        data, _ = resolve_page(self._manifests[volume_key], page_index)
        media_type = "image/png"
        if data.startswith(b"\xff\xd8\xff"):
            media_type = "image/jpeg"
        elif data[:4] in (b"II*\x00", b"MM\x00*"):
            media_type = "image/tiff"
        return data, media_type

    def progress(self) -> dict:
        counts = {status.value: 0 for status in FlagStatus}
        by_volume: dict[str, dict[str, int]] = {}
        for flag in self.store.load_all().values():
            counts[flag.status.value] += 1
            volume = by_volume.setdefault(
                flag.volume_key, {status.value: 0 for status in FlagStatus}
            )
            volume[flag.status.value] += 1
        return {"counts": counts, "volumes": by_volume}


class ResolutionBody(BaseModel):
    action: Literal["resolve", "dismiss", "delete_row"]
    entry: str | None = None
    patent_id: str | None = None
    note: str | None = None


def _error(status_code: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status_code, content={"code": code, "message": message})


def create_app(
    out_dir: str | Path,
    manifest_paths: list[Path] | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    service = ReviewService(out_dir, manifest_paths)
    app = FastAPI(title="patentpipe review service")
    app.state.service = service

    @app.exception_handler(RequestValidationError)
    async def _invalid_request(request: Request, exc: RequestValidationError) -> JSONResponse:
        return _error(422, "invalid_request", str(exc.errors()[:1]))

    @app.exception_handler(UnknownFlag)
    async def _unknown_flag(request: Request, exc: UnknownFlag) -> JSONResponse:
        return _error(404, "unknown_flag", str(exc))

    @app.exception_handler(AlreadyClosed)
    async def _already_closed(request: Request, exc: AlreadyClosed) -> JSONResponse:
        return _error(409, "already_closed", str(exc))

    @app.exception_handler(ResolutionError)
    async def _resolution_error(request: Request, exc: ResolutionError) -> JSONResponse:
        return _error(422, "invalid_resolution", str(exc))

    @app.exception_handler(UnknownPage)
    async def _unknown_page(request: Request, exc: UnknownPage) -> JSONResponse:
        return _error(404, "unknown_page", str(exc))

    @app.exception_handler(MissingFile)
    async def _missing_file(request: Request, exc: MissingFile) -> JSONResponse:
        return _error(404, "missing_file", str(exc))

    @app.exception_handler(HashMismatch)
    async def _hash_mismatch(request: Request, exc: HashMismatch) -> JSONResponse:
        return _error(500, "hash_mismatch", str(exc))

    @app.get("/api/flags")
    def list_flags(
        status: str | None = None, kind: str | None = None, volume: str | None = None
    ) -> list[dict]:
        return service.list_flags(status=status, kind=kind, volume=volume)

    @app.get("/api/flags/{flag_id}")
    def get_flag(flag_id: str) -> dict:
        return service.get_flag(flag_id)

    @app.post("/api/flags/{flag_id}/resolution")
    def post_resolution(flag_id: str, body: ResolutionBody) -> dict:
        return service.resolve_flag(
            flag_id,
            action=body.action,
            entry=body.entry,
            patent_id=body.patent_id,
            note=body.note,
        )

    @app.api_route("/api/pages/{volume_key}/{page_index}", methods=["GET", "HEAD"])
    def get_page(volume_key: str, page_index: int, request: Request) -> Response:
        data, media_type = service.page_image(volume_key, page_index)
        if request.method == "HEAD":
            return Response(
                content=b"",
                media_type=media_type,
                headers={"content-length": str(len(data))},
            )
        return Response(content=data, media_type=media_type)

    @app.get("/api/progress")
    def get_progress() -> dict:
        return service.progress()

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
