import hashlib
import json
from pathlib import Path

import pytest

from patentpipe.gateway import RetryPolicy

# Deterministic backends need no backoff; keep test retries instant.
FAST_ENTRY = RetryPolicy(max_attempts=10, base_delay=0.0, jitter=False)
FAST_PAGE = RetryPolicy(max_attempts=25, base_delay=0.0, jitter=False)


def write_volume(
    tmp_path: Path,
    volume_key: str = "1898",
    page_count: int = 3,
    id_range: tuple[int, int] = (1, 100),
    layout_variant: str = "standard",
    exclusions: dict | None = None,
) -> tuple[Path, list[bytes]]:
    """Write a minimal manifest plus per-page image files; returns (manifest_path, images)."""
    images = []
    pages = []
    for index in range(1, page_count + 1):
        data = f"fake page {volume_key}/{index}".encode()
        path = tmp_path / f"{volume_key}_{index:05}.png"
        path.write_bytes(data)
        images.append(data)
        pages.append(
            {
                "page_index": index,
                "image_path": path.name,
                "image_hash": hashlib.sha256(data).hexdigest(),
            }
        )
    manifest = {
        "volume_key": volume_key,
        "year_label": volume_key,
        "layout_variant": layout_variant,
        "has_location": True,
        "id_range": {"first": id_range[0], "last": id_range[1]},
        "pages": pages,
    }
    if exclusions is not None:
        manifest["exclusions"] = exclusions
    manifest_path = tmp_path / f"{volume_key}.json"
    manifest_path.write_text(json.dumps(manifest), encoding="utf-8")
    return manifest_path, images


@pytest.fixture
def volume(tmp_path):
    manifest_path, images = write_volume(tmp_path)
    return manifest_path, images


@pytest.fixture(scope="session")
def synthetic_corpus(tmp_path_factory):
    """One shared synthetic corpus for pipeline-level tests."""
    from patentpipe.synthetic import generate_corpus

    root = tmp_path_factory.mktemp("corpus")
    return generate_corpus(root)


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {outcome}: {name}", flush=True)
