import itertools
import random
from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patentpipe.benchmark import (
    EditCounts,
    EmptyReference,
    MatchReport,
    VariableReport,
    bounded_distance,
    cells_match,
    cer,
    cer_by_volume,
    concat_entries,
    format_pct,
    greedy_match,
    levenshtein,
    levenshtein_distance,
    similarity,
    stage2_report,
    write_side_by_side,
)
from patentpipe.variables import PatentFields


def naive_distance(a: str, b: str) -> int:
    """Textbook recursive definition; memoized only to keep tests quick."""

    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        if a[i - 1] == b[j - 1]:
            return rec(i - 1, j - 1)
        return 1 + min(rec(i - 1, j), rec(i, j - 1), rec(i - 1, j - 1))

    return rec(len(a), len(b))


short_text = st.text(alphabet="abſö—", max_size=10)


class TestLevenshtein:
    @pytest.mark.parametrize(
        "a, b, expected",
        [("abc", "abc", 0), ("kitten", "sitting", 3), ("609", "600", 1), ("", "", 0)],
    )
    def test_fixtures(self, a, b, expected):
        distance, counts = levenshtein(a, b)
        assert distance == expected
        assert counts.total == expected
        assert levenshtein_distance(a, b) == expected

    def test_empty_candidate_counts_deletions(self):
        distance, counts = levenshtein("", "ab")
        assert distance == 2
        assert counts == EditCounts(substitutions=0, deletions=2, insertions=0, reference_length=2)

    def test_extra_candidate_text_counts_insertions(self):
        _, counts = levenshtein("abXY", "ab")
        assert counts.insertions == 2
        assert counts.deletions == 0

    def test_substitution_counted(self):
        _, counts = levenshtein("abd", "abc")
        assert counts == EditCounts(substitutions=1, deletions=0, insertions=0, reference_length=3)

    @given(short_text, short_text)
    @settings(max_examples=300)
    def test_agrees_with_recursion_and_counts_sum(self, a, b):
        distance, counts = levenshtein(a, b)
        assert distance == naive_distance(a, b)
        assert counts.total == distance
        assert counts.reference_length == len(b)

    @given(short_text, short_text)
    def test_symmetry(self, a, b):
        assert levenshtein_distance(a, b) == levenshtein_distance(b, a)

    @given(short_text)
    def test_identity(self, a):
        assert levenshtein_distance(a, a) == 0

    @given(short_text, short_text, short_text)
    @settings(max_examples=200)
    def test_triangle_inequality(self, a, b, c):
        assert levenshtein_distance(a, c) <= levenshtein_distance(a, b) + levenshtein_distance(b, c)

    @given(short_text, short_text, st.integers(min_value=0, max_value=12))
    @settings(max_examples=300)
    def test_bounded_agrees_with_full(self, a, b, limit):
        full = levenshtein_distance(a, b)
        bounded = bounded_distance(a, b, limit)
        if full <= limit:
            assert bounded == full
        else:
            assert bounded is None


class TestCer:
    def test_identical(self):
        assert cer("same text", "same text") == 0.0

    def test_one_third(self):
        assert cer("abd", "abc") == 1 / 3

    def test_empty_candidate(self):
        assert cer("", "ab") == 1.0

    def test_empty_reference_rejected(self):
        with pytest.raises(EmptyReference):
            cer("abc", "")

    def test_can_exceed_one(self):
        assert cer("wildly different and much longer", "ab") > 1.0


class TestSimilarity:
    def test_identical(self):
        assert similarity("Berlin", "Berlin") == 1.0

    def test_trailing_period_below_threshold(self):
        value = similarity("Berlin.", "Berlin")
        assert value == 1 - 1 / 7
        assert value < 0.90

    def test_empty_vs_nonempty(self):
        assert similarity("", "x") == 0.0

    def test_both_empty(self):
        assert similarity("", "") == 1.0

    def test_boundary_two_of_twenty(self):
        a = "a" * 20
        b = "a" * 18 + "bb"
        assert similarity(a, b) == 0.90


class TestGreedyMatch:
    def test_identity_lists(self):
        entries = [f"entry number {i}" for i in range(5)]
        report = greedy_match(entries, list(entries))
        assert report.matched_count == 5
        assert report.recall == 1.0
        assert report.precision == 1.0
        assert report.pairs == tuple((i, i, 1.0) for i in range(5))

    def test_extra_extracted_lowers_precision(self):
        report = greedy_match(["aaaa", "bbbb"], ["aaaa"])
        assert report.matched_count == 1
        assert report.recall == 1.0
        assert report.precision == 0.5
        assert report.unmatched_extracted == (1,)

    def test_threshold_boundary_inclusive(self):
        a = "a" * 20
        b = "a" * 18 + "bb"
        report = greedy_match([a], [b], threshold=0.90)
        assert report.matched_count == 1

    def test_below_threshold_non_match(self):
        report = greedy_match(["Berlin."], ["Berlin"], threshold=0.90)
        assert report.matched_count == 0

    def test_one_to_one(self):
        report = greedy_match(["aaaa", "aaaa"], ["aaaa"])
        assert report.matched_count == 1

    def test_descending_similarity_order_with_tiebreaks(self):
        # both extracted match both perfect; best pair wins, one-to-one holds
        report = greedy_match(["abcd", "abce"], ["abcd", "abce"], threshold=0.5)
        assert set(report.pairs) == {(0, 0, 1.0), (1, 1, 1.0)}

    def test_document_order_variant(self):
        report = greedy_match(
            ["abcd", "abce"], ["abce", "abcd"], threshold=0.5, order="document"
        )
        # extracted[0] grabs its exact twin first
        assert report.pairs[0] == (0, 1, 1.0)
        assert report.matched_count == 2

    def test_threshold_monotonicity(self):
        rng = random.Random(1)
        extracted = ["".join(rng.choices("abcd", k=8)) for _ in range(12)]
        perfect = ["".join(rng.choices("abcd", k=8)) for _ in range(12)]
        matched = [
            greedy_match(extracted, perfect, threshold=t).matched_count
            for t in (0.1, 0.3, 0.5, 0.7, 0.9)
        ]
        assert matched == sorted(matched, reverse=True)

    def test_recall_precision_consistency(self):
        report = greedy_match(["aaaa", "bbbb", "cccc"], ["aaaa", "bbbb"])
        assert report.recall * report.perfect_count == report.matched_count
        assert report.precision * report.extracted_count == report.matched_count


class TestReportArithmetic:
    def test_stage1_extraction_column(self):
        report = MatchReport.from_counts(perfect=1385, extracted=1403, matched=1360)
        assert report.as_dict()["pct_perfect_matched"] == "98.19%"
        assert report.as_dict()["pct_extracted_matched"] == "96.94%"

    def test_stage1_reparation_column(self):
        report = MatchReport.from_counts(perfect=1385, extracted=1385, matched=1378)
        assert report.as_dict()["pct_perfect_matched"] == "99.49%"
        assert report.as_dict()["pct_extracted_matched"] == "99.49%"

    def test_stage2_total_cells(self):
        assert format_pct(6550, 6890) == "95.07%"

    @pytest.mark.parametrize(
        "matched, expected",
        [(1371, "99.49%"), (1270, "92.16%"), (1259, "91.36%"), (1287, "93.40%"), (1363, "98.91%")],
    )
    def test_stage2_by_variable(self, matched, expected):
        assert format_pct(matched, 1378) == expected

    def test_rounding_is_half_up(self):
        assert format_pct(1287, 1378) == "93.40%"  # 93.3962... rounds up at the 2nd decimal
        assert format_pct(1, 8) == "12.50%"
        assert format_pct(1, 3) == "33.33%"


class TestStage2Report:
    def fields(self, **kwargs):
        return PatentFields(**kwargs)

    def test_all_identical_cells(self):
        fields = [self.fields(patent_id="1", assignee="A", location="L", title="T", date="D")]
        report = stage2_report([(0, 0, 1.0)], fields, list(fields))
        assert report.total_cells == 5
        assert report.matched_cells == 5
        assert report.as_dict()["match_rate"] == "100.00%"

    def test_sentinel_vs_value_mismatch(self):
        candidate = [self.fields(date="NaN")]
        perfect = [self.fields(date="5. Juni 1890")]
        report = stage2_report([(0, 0, 1.0)], candidate, perfect)
        total, matched = report.per_variable["date"]
        assert (total, matched) == (1, 0)

    def test_both_sentinel_match(self):
        report = stage2_report([(0, 0, 1.0)], [self.fields()], [self.fields()])
        assert report.matched_cells == 5

    def test_fuzzy_cell_match(self):
        candidate = [self.fields(title="Verfahren zur Herstellung von Stahl und Eisen.")]
        perfect = [self.fields(title="Verfahren zur Herstellung von Stahl und Eiſen.")]
        report = stage2_report([(0, 0, 1.0)], candidate, perfect)
        assert report.per_variable["title"] == (1, 1)

    def test_total_cells_is_five_per_pair(self):
        fields = [self.fields(), self.fields()]
        report = stage2_report([(0, 0, 1.0), (1, 1, 1.0)], fields, fields)
        assert report.total_cells == 10


def test_cells_match_short_field_requires_exactness():
    assert not cells_match("Dresden", "Dreſden")  # 1/7 off falls under 0.90
    assert cells_match("299178", "299178")


class TestCerByVolume:
    def test_identical_volumes(self):
        entries = {"1890": ["abc", "def"]}
        assert cer_by_volume(entries, entries) == {"1890": 0.0}

    def test_single_substitution_in_hundred_chars(self):
        reference = ["a" * 49, "b" * 49]  # 98 chars + 2 newline terminators = 100
        candidate = ["a" * 48 + "c", "b" * 49]
        value = cer_by_volume({"v": candidate}, {"v": reference})["v"]
        assert value == 1 / 100

    def test_hallucinated_entry_mass(self):
        reference = [f"entry {i} " + "x" * 90 for i in range(20)]  # ~2,000 chars
        candidate = list(reference) + ["hallucinated entry " + "y" * 31]  # ~50 extra chars
        value = cer_by_volume({"v": candidate}, {"v": reference})["v"]
        assert value >= 0.025

    def test_empty_reference_volume_rejected(self):
        with pytest.raises(EmptyReference):
            cer_by_volume({"v": ["x"]}, {"v": []})

    def test_concat_uses_newline_terminators(self):
        assert concat_entries(["a", "b"]) == "a\nb\n"


def test_side_by_side_diff(tmp_path):
    extracted = ["alpha", "beta!"]
    perfect = ["alpha", "gamma"]
    report = greedy_match(extracted, perfect, threshold=0.9)
    path = tmp_path / "diff.txt"
    write_side_by_side(path, extracted, perfect, report)
    text = path.read_text(encoding="utf-8")
    assert "EXTRACTED" in text and "PERFECT" in text
    assert "beta!" in text and "gamma" in text


def exhaustive_best_assignment(extracted, perfect, threshold):
    """Maximum-cardinality, then maximum-total-similarity one-to-one assignment."""
    n, m = len(extracted), len(perfect)
    sims = {
        (i, j): similarity(extracted[i], perfect[j])
        for i in range(n)
        for j in range(m)
        if similarity(extracted[i], perfect[j]) >= threshold
    }
    best = (0, 0.0, frozenset())
    indices = list(sims)
    for size in range(min(n, m), -1, -1):
        for combo in itertools.combinations(indices, size):
            if len({i for i, _ in combo}) != size or len({j for _, j in combo}) != size:
                continue
            total = sum(sims[pair] for pair in combo)
            candidate = (size, total, frozenset(combo))
            if candidate[:2] > best[:2]:
                best = candidate
        if best[0] == size and size > 0:
            break
    return best


class TestGreedyVsExhaustive:
    def test_well_separated_instances(self):
        """Instances built so cross similarities sit far below the threshold."""
        rng = random.Random(5)
        letters = "abcdefgh"
        for _ in range(10):
            size = rng.randint(2, 6)
            perfect = [letters[i] * rng.randint(10, 14) for i in range(size)]
            extracted = []
            for i in range(size):
                base = perfect[i]
                mutated = base[:-1] + ("z" if rng.random() < 0.5 else base[-1])
                extracted.append(mutated)
            rng.shuffle(extracted)
            report = greedy_match(extracted, perfect, threshold=0.85)
            size_best, _, pairs_best = exhaustive_best_assignment(extracted, perfect, 0.85)
            assert report.matched_count == size_best
            assert {(i, j) for i, j, _ in report.pairs} == set(pairs_best)
