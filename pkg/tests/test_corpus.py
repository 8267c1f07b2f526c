import hashlib
import json

import pytest

from patentpipe.corpus import (
    HashMismatch,
    InvariantViolation,
    LayoutVariant,
    MalformedManifest,
    MissingFile,
    UnknownPage,
    load_manifest,
    resolve_page,
)
from tests.conftest import write_volume


def test_minimal_manifest(volume):
    manifest_path, _ = volume
    manifest = load_manifest(manifest_path)
    assert manifest.volume_key == "1898"
    assert len(manifest.pages) == 3
    assert manifest.id_range == (1, 100)
    assert manifest.layout_variant is LayoutVariant.STANDARD
    assert manifest.exclusions is None


def test_reversed_id_range_rejected(tmp_path):
    manifest_path, _ = write_volume(tmp_path, id_range=(100, 1))
    with pytest.raises(InvariantViolation):
        load_manifest(manifest_path)


def test_terminal_id_variant(tmp_path):
    manifest_path, _ = write_volume(tmp_path, volume_key="1879", layout_variant="terminal_id")
    manifest = load_manifest(manifest_path)
    assert manifest.layout_variant is LayoutVariant.TERMINAL_ID


def test_missing_file(tmp_path):
    with pytest.raises(MissingFile):
        load_manifest(tmp_path / "nope.json")


def test_malformed_manifest_reports_field(tmp_path):
    manifest_path, _ = write_volume(tmp_path)
    raw = json.loads(manifest_path.read_text())
    del raw["year_label"]
    manifest_path.write_text(json.dumps(raw))
    with pytest.raises(MalformedManifest) as err:
        load_manifest(manifest_path)
    assert err.value.field == "year_label"


def test_unknown_layout_variant(tmp_path):
    manifest_path, _ = write_volume(tmp_path, layout_variant="sideways")
    with pytest.raises(MalformedManifest) as err:
        load_manifest(manifest_path)
    assert err.value.field == "layout_variant"


def test_page_gap_rejected(tmp_path):
    manifest_path, _ = write_volume(tmp_path)
    raw = json.loads(manifest_path.read_text())
    raw["pages"][2]["page_index"] = 5
    manifest_path.write_text(json.dumps(raw))
    with pytest.raises(InvariantViolation):
        load_manifest(manifest_path)


def test_pages_must_be_one_based(tmp_path):
    manifest_path, _ = write_volume(tmp_path)
    raw = json.loads(manifest_path.read_text())
    for page in raw["pages"]:
        page["page_index"] -= 1
    manifest_path.write_text(json.dumps(raw))
    with pytest.raises(InvariantViolation):
        load_manifest(manifest_path)


def test_iteration_in_page_order(volume):
    manifest = load_manifest(volume[0])
    assert [p.page_index for p in manifest] == [1, 2, 3]


def test_resolve_page(volume):
    manifest_path, images = volume
    manifest = load_manifest(manifest_path)
    data, ref = resolve_page(manifest, 1)
    assert data == images[0]
    assert ref.page_index == 1
    # pure given unchanged files
    again, _ = resolve_page(manifest, 1)
    assert again == data


def test_resolve_unknown_page(volume):
    manifest = load_manifest(volume[0])
    with pytest.raises(UnknownPage):
        resolve_page(manifest, 9999)


def test_tampered_image_detected(tmp_path):
    manifest_path, images = write_volume(tmp_path, page_count=1)
    manifest = load_manifest(manifest_path)
    image_file = tmp_path / manifest.pages[0].image_path
    original = bytearray(image_file.read_bytes())
    original[0] ^= 0xFF
    image_file.write_bytes(bytes(original))
    assert hashlib.sha256(bytes(original)).hexdigest() != manifest.pages[0].image_hash
    with pytest.raises(HashMismatch):
        resolve_page(manifest, 1)


@pytest.mark.parametrize(
    "exclusions, matching, non_matching",
    [
        ({"ids": [7]}, [7], [8]),
        ({"below": 1000}, [500, 999], [1000, 1500]),
        ({"above": 100}, [101], [100, 1]),
        ({"ids": [3], "below": 2}, [1, 3], [2, 4]),
    ],
)
def test_exclusion_predicates(tmp_path, exclusions, matching, non_matching):
    manifest_path, _ = write_volume(tmp_path, exclusions=exclusions)
    manifest = load_manifest(manifest_path)
    for value in matching:
        assert manifest.exclusions.matches(value)
    for value in non_matching:
        assert not manifest.exclusions.matches(value)


def test_exclusions_unknown_key_rejected(tmp_path):
    manifest_path, _ = write_volume(tmp_path, exclusions={"betwixt": 5})
    with pytest.raises(MalformedManifest):
        load_manifest(manifest_path)
