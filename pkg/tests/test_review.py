import json

import pytest
from fastapi.testclient import TestClient

from patentpipe.review import apply_audit_log, create_app
from patentpipe.validation import FlagStore, collect_flags
from patentpipe.variables import (
    PatentFields,
    PatentRecord,
    read_records_json,
    write_records_json,
)
from patentpipe.corpus import load_manifest
from tests.conftest import write_volume


def build_out_dir(tmp_path):
    """Small reviewable dataset: a duplicate-ID pair and one merged row."""
    manifest_path, images = write_volume(tmp_path, volume_key="1890", page_count=2, id_range=(1, 700))
    manifest = load_manifest(manifest_path)

    def rec(row_ref, patent_id, entry, page_first=1, page_last=1, was_merged=False):
        return PatentRecord(
            volume_key="1890",
            page_first=page_first,
            page_last=page_last,
            entry=entry,
            category="5",
            merged_from=(row_ref,) if not was_merged else (row_ref, row_ref + 1),
            was_merged=was_merged,
            fields=PatentFields(patent_id=patent_id, assignee="A", location="L", title="T", date="D"),
        )

    records = [
        rec(1, "600", "600. first entry"),
        rec(2, "600", "600. misread entry (really 609)"),
        rec(4, "7", "7. spanning entry", page_first=1, page_last=2, was_merged=True),
    ]
    out = tmp_path / "out"
    (out / "validated").mkdir(parents=True)
    write_records_json(records, out / "validated" / "1890.json")
    store = FlagStore(out / "flags")
    store.emit(collect_flags(records, manifest))
    return out, manifest_path, records, images


@pytest.fixture
def setup(tmp_path):
    out, manifest_path, records, images = build_out_dir(tmp_path)
    app = create_app(out, manifest_paths=[manifest_path])
    return TestClient(app), out, records, images


def get_flags(client, **params):
    response = client.get("/api/flags", params=params)
    assert response.status_code == 200
    return response.json()


class TestQueue:
    def test_empty_store(self, tmp_path):
        out = tmp_path / "empty_out"
        (out / "validated").mkdir(parents=True)
        client = TestClient(create_app(out))
        assert get_flags(client) == []

    def test_all_flags_listed_in_stable_order(self, setup):
        client, *_ = setup
        flags = get_flags(client)
        assert [f["kind"] for f in flags] == ["duplicate_id", "duplicate_id", "merged_entry"]
        assert [f["row_ref"] for f in flags] == [1, 2, 4]

    def test_filter_by_status(self, setup):
        client, *_ = setup
        first = get_flags(client)[0]
        client.post(f"/api/flags/{first['flag_id']}/resolution", json={"action": "dismiss"})
        assert len(get_flags(client, status="open")) == 2
        assert len(get_flags(client, status="dismissed")) == 1

    def test_filter_by_kind_and_volume(self, setup):
        client, *_ = setup
        assert len(get_flags(client, kind="merged_entry")) == 1
        assert get_flags(client, kind="no_such_kind") == []
        assert get_flags(client, volume="1891") == []


class TestGetFlag:
    def test_detail_includes_record_and_image(self, setup):
        client, *_ = setup
        flag = get_flags(client)[0]
        detail = client.get(f"/api/flags/{flag['flag_id']}").json()
        assert detail["record"]["fields"]["patent_id"] == "600"
        assert detail["images"] == ["/api/pages/1890/1"]

    def test_merged_row_lists_both_pages(self, setup):
        client, *_ = setup
        flag = get_flags(client, kind="merged_entry")[0]
        detail = client.get(f"/api/flags/{flag['flag_id']}").json()
        assert detail["images"] == ["/api/pages/1890/1", "/api/pages/1890/2"]

    def test_unknown_flag_404(self, setup):
        client, *_ = setup
        response = client.get("/api/flags/1890:duplicate_id:99:0")
        assert response.status_code == 404
        assert response.json()["code"] == "unknown_flag"


class TestResolve:
    def test_fix_misread_id(self, setup):
        client, out, records, _ = setup
        target = get_flags(client)[1]  # row 2 carries the misread 600
        response = client.post(
            f"/api/flags/{target['flag_id']}/resolution",
            json={"action": "resolve", "patent_id": "609", "note": "faint lower 9"},
        )
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "resolved"
        assert body["record"]["fields"]["patent_id"] == "609"
        assert body["next_flag_id"] is not None

        stored = read_records_json(out / "validated" / "1890.json")
        assert [r.fields.patent_id for r in stored] == ["600", "609", "7"]

        # the duplicate pair has dissolved: validation raises nothing new
        manifest = load_manifest(out.parent / "1890.json")
        store = FlagStore(out / "flags")
        assert store.emit(collect_flags(stored, manifest)) == 0

    def test_entry_edit(self, setup):
        client, out, *_ = setup
        target = get_flags(client)[0]
        client.post(
            f"/api/flags/{target['flag_id']}/resolution",
            json={"action": "resolve", "entry": "600. corrected text"},
        )
        stored = read_records_json(out / "validated" / "1890.json")
        assert stored[0].entry == "600. corrected text"

    def test_dismiss_leaves_row_unchanged(self, setup):
        client, out, records, _ = setup
        target = get_flags(client)[0]
        response = client.post(
            f"/api/flags/{target['flag_id']}/resolution", json={"action": "dismiss"}
        )
        assert response.json()["status"] == "dismissed"
        assert read_records_json(out / "validated" / "1890.json") == records

    def test_resolve_twice_conflicts(self, setup):
        client, *_ = setup
        target = get_flags(client)[0]
        url = f"/api/flags/{target['flag_id']}/resolution"
        assert client.post(url, json={"action": "dismiss"}).status_code == 200
        second = client.post(url, json={"action": "dismiss"})
        assert second.status_code == 409
        assert second.json()["code"] == "already_closed"

    def test_non_digit_id_rejected(self, setup):
        client, *_ = setup
        target = get_flags(client)[0]
        response = client.post(
            f"/api/flags/{target['flag_id']}/resolution",
            json={"action": "resolve", "patent_id": "60x"},
        )
        assert response.status_code == 422

    def test_edits_forbidden_on_dismiss(self, setup):
        client, *_ = setup
        target = get_flags(client)[0]
        response = client.post(
            f"/api/flags/{target['flag_id']}/resolution",
            json={"action": "dismiss", "patent_id": "609"},
        )
        assert response.status_code == 422

    def test_delete_row(self, setup):
        client, out, *_ = setup
        target = get_flags(client, kind="merged_entry")[0]
        response = client.post(
            f"/api/flags/{target['flag_id']}/resolution", json={"action": "delete_row"}
        )
        assert response.status_code == 200
        stored = read_records_json(out / "validated" / "1890.json")
        assert [r.row_ref for r in stored] == [1, 2]
        detail = client.get(f"/api/flags/{target['flag_id']}").json()
        assert detail["status"] == "resolved"
        assert len(detail["audit"]) == 1


class TestPages:
    def test_serve_page_bytes(self, setup):
        client, _, _, images = setup
        response = client.get("/api/pages/1890/1")
        assert response.status_code == 200
        assert response.content == images[0]

    def test_unknown_page_404(self, setup):
        client, *_ = setup
        assert client.get("/api/pages/1890/99").status_code == 404
        assert client.get("/api/pages/1877/1").status_code == 404

    def test_head_returns_headers_only(self, setup):
        client, *_ = setup
        response = client.head("/api/pages/1890/1")
        assert response.status_code == 200
        assert response.content == b""


def test_progress_counts(setup):
    client, *_ = setup
    target = get_flags(client)[0]
    client.post(f"/api/flags/{target['flag_id']}/resolution", json={"action": "dismiss"})
    progress = client.get("/api/progress").json()
    assert progress["counts"] == {"open": 2, "resolved": 0, "dismissed": 1}
    assert progress["volumes"]["1890"]["dismissed"] == 1


def test_queue_conservation(setup):
    client, *_ = setup
    before = client.get("/api/progress").json()["counts"]
    target = get_flags(client)[0]
    client.post(f"/api/flags/{target['flag_id']}/resolution", json={"action": "dismiss"})
    after = client.get("/api/progress").json()["counts"]
    assert sum(before.values()) == sum(after.values())


def test_audit_replay_reproduces_dataset(setup, tmp_path):
    client, out, pre_records, _ = setup
    flags = get_flags(client)
    client.post(
        f"/api/flags/{flags[1]['flag_id']}/resolution",
        json={"action": "resolve", "patent_id": "609"},
    )
    client.post(
        f"/api/flags/{flags[0]['flag_id']}/resolution",
        json={"action": "resolve", "entry": "600. cleaned up"},
    )
    client.post(f"/api/flags/{flags[2]['flag_id']}/resolution", json={"action": "delete_row"})

    events = [
        json.loads(line)
        for line in (out / "flags" / "1890.jsonl").read_text().splitlines()
        if line.strip()
    ]
    replayed = apply_audit_log(pre_records, events)
    replay_path = tmp_path / "replayed.json"
    write_records_json(replayed, replay_path)
    assert replay_path.read_bytes() == (out / "validated" / "1890.json").read_bytes()


def test_next_flag_cursor_walks_queue(setup):
    client, *_ = setup
    service_flags = get_flags(client, status="open")
    current = service_flags[0]["flag_id"]
    seen = []
    while current is not None:
        seen.append(current)
        response = client.post(
            f"/api/flags/{current}/resolution", json={"action": "dismiss"}
        )
        current = response.json()["next_flag_id"]
    assert seen == [f["flag_id"] for f in service_flags]
    assert get_flags(client, status="open") == []


def test_malformed_body_returns_error_contract(setup):
    client, *_ = setup
    target = get_flags(client)[0]
    response = client.post(
        f"/api/flags/{target['flag_id']}/resolution", json={"action": "explode"}
    )
    assert response.status_code == 422
    body = response.json()
    assert set(body) == {"code", "message"}
