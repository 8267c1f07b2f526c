import json

import pytest

from patentpipe.cli import main


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    from patentpipe.synthetic import generate_corpus

    root = tmp_path_factory.mktemp("cli_corpus")
    # small corpus keeps the CLI tests snappy
    return generate_corpus(root, entries_per_volume=24, volume_count=2)


def manifest_args(corpus):
    args = []
    for path in corpus.manifest_paths:
        args += ["--manifest", path]
    return args


def test_full_run(tmp_path, corpus, capsys):
    out = tmp_path / "out"
    code = run_cli(
        "run", *manifest_args(corpus), "--out", out, "--fixtures", corpus.fixtures_path
    )
    assert code == 0
    assert (out / "merged.csv").is_file()
    assert (out / "extracted").is_dir()
    assert (out / "flags").is_dir()

    code = run_cli(
        "bench",
        "--candidate", out / "merged.csv",
        "--perfect", corpus.perfect_csv,
        "--out", out,
    )
    assert code == 0
    report = json.loads((out / "reports" / "benchmark.json").read_text())
    assert report["matching"]["recall"] == 1.0
    assert report["matching"]["precision"] == 1.0
    assert all(value == 0.0 for value in report["cer_by_volume"].values())


def test_repair_before_extract_exits_2(tmp_path, corpus, capsys):
    out = tmp_path / "fresh"
    code = run_cli(
        "repair", *manifest_args(corpus), "--out", out, "--fixtures", corpus.fixtures_path
    )
    assert code == 2
    error = json.loads(capsys.readouterr().err.strip())
    assert error["code"] == "missing_prerequisite"


def test_stagewise_equals_monolithic(tmp_path, corpus):
    stepwise = tmp_path / "stepwise"
    monolithic = tmp_path / "monolithic"
    for stage in ("extract", "repair", "variables"):
        assert run_cli(
            stage, *manifest_args(corpus), "--out", stepwise, "--fixtures", corpus.fixtures_path
        ) == 0
    assert run_cli("validate", *manifest_args(corpus), "--out", stepwise) == 0
    assert run_cli("merge", "--out", stepwise) == 0
    assert run_cli(
        "run", *manifest_args(corpus), "--out", monolithic, "--fixtures", corpus.fixtures_path
    ) == 0
    assert (stepwise / "merged.csv").read_bytes() == (monolithic / "merged.csv").read_bytes()


def test_rerun_is_noop_without_force(tmp_path, corpus):
    out = tmp_path / "out"
    assert run_cli(
        "run", *manifest_args(corpus), "--out", out, "--fixtures", corpus.fixtures_path
    ) == 0
    merged = (out / "merged.csv").read_bytes()
    ledger_size = (out / "usage.jsonl").stat().st_size
    # second run skips the gateway stages entirely: ledger does not grow
    assert run_cli(
        "run", *manifest_args(corpus), "--out", out, "--fixtures", corpus.fixtures_path
    ) == 0
    assert (out / "usage.jsonl").stat().st_size == ledger_size
    assert (out / "merged.csv").read_bytes() == merged


def test_force_rerun_reissues_calls(tmp_path, corpus):
    out = tmp_path / "out"
    run_cli("extract", *manifest_args(corpus), "--out", out, "--fixtures", corpus.fixtures_path)
    size_first = (out / "usage.jsonl").stat().st_size
    run_cli(
        "extract", *manifest_args(corpus), "--out", out,
        "--fixtures", corpus.fixtures_path, "--force",
    )
    assert (out / "usage.jsonl").stat().st_size == 2 * size_first


def test_bench_on_self_is_perfect(tmp_path, corpus):
    out = tmp_path / "out"
    code = run_cli(
        "bench",
        "--candidate", corpus.perfect_csv,
        "--perfect", corpus.perfect_csv,
        "--out", out,
    )
    assert code == 0
    report = json.loads((out / "reports" / "benchmark.json").read_text())
    assert report["matching"]["pct_perfect_matched"] == "100.00%"
    assert report["variables"]["match_rate"] == "100.00%"


def test_cost_command(tmp_path, corpus):
    out = tmp_path / "out"
    run_cli("run", *manifest_args(corpus), "--out", out, "--fixtures", corpus.fixtures_path)
    prices = tmp_path / "prices.json"
    prices.write_text(
        json.dumps(
            {
                "pro": {"input_per_1m": 1.25, "output_per_1m": 10.0},
                "lite": {"input_per_1m": 0.10, "output_per_1m": 0.40},
            }
        )
    )
    assert run_cli("cost", "--prices", prices, "--out", out) == 0
    report = json.loads((out / "reports" / "cost.json").read_text())
    stages = {row["stage"] for row in report["stages"]}
    assert stages == {"extraction", "reparation", "variable_extraction"}
    assert run_cli("cost", "--prices", prices, "--out", out, "--batch") == 0
    batch_report = json.loads((out / "reports" / "cost.json").read_text())
    assert batch_report["total"]["cost"] == pytest.approx(report["total"]["cost"] * 0.5, abs=0.01)


def test_mock_backend_requires_fixtures(tmp_path, corpus, capsys):
    code = run_cli("extract", *manifest_args(corpus), "--out", tmp_path / "x")
    assert code == 1
    error = json.loads(capsys.readouterr().err.strip())
    assert "fixtures" in error["message"]


def test_terminal_id_layout_end_to_end(tmp_path):
    """Early-volume layout: the manifest's variant selects the alternate prompts,
    IDs trail the entries, and the pipeline still reproduces ground truth."""
    from patentpipe.corpus import LayoutVariant
    from patentpipe.synthetic import generate_corpus

    corpus = generate_corpus(
        tmp_path / "corpus",
        entries_per_volume=30,
        volume_count=1,
        layout=LayoutVariant.TERMINAL_ID,
    )
    truth = corpus.volumes[0].truth
    assert all(e.text.rstrip(".").rsplit("P. R. ", 1)[-1].isdigit() or e.fields.patent_id == "NaN" for e in truth)
    assert all(len(e.fields.patent_id) <= 4 for e in truth if e.fields.patent_id != "NaN")

    out = tmp_path / "out"
    code = run_cli(
        "run", "--manifest", corpus.manifest_paths[0], "--out", out,
        "--fixtures", corpus.fixtures_path,
    )
    assert code == 0
    code = run_cli(
        "bench", "--candidate", out / "merged.csv",
        "--perfect", corpus.perfect_csv, "--out", out,
    )
    assert code == 0
    report = json.loads((out / "reports" / "benchmark.json").read_text())
    assert report["matching"]["recall"] == 1.0
    assert report["matching"]["precision"] == 1.0
    assert all(v == 0.0 for v in report["cer_by_volume"].values())
