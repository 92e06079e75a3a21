import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sprag.evaluation import (
    BASELINE_METHODS,
    GROUP_ORDER,
    RAG_METHODS,
    BaselineTable,
    MissingCellError,
    ProjectScore,
    group_summary,
    load_reference_sizes,
    load_reference_table,
    mae,
    mdae,
    win_counts,
)


class TestMae:
    def test_exact_predictions(self):
        assert mae([2, 3], [2, 3]) == 0.0

    def test_direct_formula(self):
        assert mae([3, 8], [5, 5]) == 2.5

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            mae([1.0], [1.0, 2.0])

    def test_empty(self):
        with pytest.raises(ValueError):
            mae([], [])

    def test_against_fraction_resummation_oracle(self):
        rng = random.Random(404)
        for _ in range(20):
            preds = [rng.uniform(0, 90) for _ in range(50)]
            truths = [rng.uniform(0, 90) for _ in range(50)]
            exact = Fraction(0)
            for p, t in zip(preds, truths):
                exact += abs(Fraction(p) - Fraction(t))
            assert mae(preds, truths) == float(exact / 50)


class TestMdae:
    def test_even_count_averages_middle_pair(self):
        assert mdae([1, 2, 3, 4], [1, 1, 1, 1]) == 1.5

    def test_single_element(self):
        assert mdae([5], [8]) == 3.0

    def test_against_sort_and_pick_oracle(self):
        rng = random.Random(505)
        for n in (1, 2, 9, 10, 50):
            preds = [rng.uniform(0, 90) for _ in range(n)]
            truths = [rng.uniform(0, 90) for _ in range(n)]
            errors = sorted(abs(p - t) for p, t in zip(preds, truths))
            mid = len(errors) // 2
            expected = errors[mid] if n % 2 else (errors[mid - 1] + errors[mid]) / 2.0
            assert mdae(preds, truths) == expected

    @given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=1, max_size=30), st.randoms())
    def test_permutation_invariance(self, paired, rng):
        preds = [p for p, _ in paired]
        truths = [t for _, t in paired]
        shuffled = paired[:]
        rng.shuffle(shuffled)
        assert mae(preds, truths) == pytest.approx(mae([p for p, _ in shuffled], [t for _, t in shuffled]))
        assert mdae(preds, truths) == mdae([p for p, _ in shuffled], [t for _, t in shuffled])

    def test_mdae_bounded_by_max_error(self):
        preds, truths = [1.0, 5.0, 13.0], [2.0, 5.0, 3.0]
        assert mdae(preds, truths) <= max(abs(p - t) for p, t in zip(preds, truths))


def score(project, method, value):
    return ProjectScore(project, method, value, value, 10)


class TestGroupSummary:
    def test_mean_and_sample_sd(self):
        scores = [score("a", "M", 1.0), score("b", "M", 2.0), score("c", "M", 3.0)]
        grouping = {"a": "Small", "b": "Small", "c": "Small"}
        (summary,) = group_summary(scores, grouping, group_order=("Small",))
        assert summary.mean_mae == 2.0
        assert summary.sd_mae == 1.0  # sample SD, n-1 denominator
        assert summary.project_count == 3 and summary.sd_defined

    def test_single_project_group_flagged(self):
        (summary,) = group_summary([score("a", "M", 1.5)], {"a": "Large"}, group_order=("Large",))
        assert summary.sd_mae == 0.0 and not summary.sd_defined

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            group_summary([score("a", "M", 1.0)], {"a": "Small"}, group_order=("Small", "Mid"))

    def test_ungrouped_project_rejected(self):
        with pytest.raises(ValueError, match="no size group"):
            group_summary([score("a", "M", 1.0)], {}, group_order=("Small",))


class TestWinCounts:
    def make_table(self):
        entries = {
            ("a", "Base"): (1.0, 1.0),
            ("b", "Base"): (2.0, 2.0),
            ("c", "Base"): (3.0, 3.0),
            ("a", "M"): (0.5, 0.5),
            ("b", "M"): (2.0, 2.0),
            ("c", "M"): (9.0, 9.0),
        }
        return BaselineTable(entries=entries)

    def test_strict_inequality_excludes_ties(self):
        table = self.make_table()
        rag = table.method_scores("M")
        grouping = {"a": "Small", "b": "Small", "c": "Small"}
        counts = win_counts(rag, table, grouping, baseline_methods=("Base",))
        # a wins, b ties, c loses
        assert counts[("M", "Base", "Small")] == 1

    def test_method_against_itself_scores_zero(self):
        table = self.make_table()
        counts = win_counts(table.method_scores("M"), table, {"a": "S", "b": "S", "c": "S"}, ("M",))
        assert counts[("M", "M", "S")] == 0

    def test_missing_cell_named(self):
        table = BaselineTable(entries={("a", "M"): (1.0, 1.0)})
        with pytest.raises(MissingCellError, match="'Base'"):
            win_counts(table.method_scores("M"), table, {"a": "S"}, ("Base",))


class TestReferenceFixture:
    def test_complete_coverage(self, reference_table):
        projects = reference_table.projects()
        assert len(projects) == 23
        for project in projects:
            for method in BASELINE_METHODS + RAG_METHODS:
                m, md = reference_table.entries[(project, method)]
                assert m >= 0 and md >= 0

    def test_group_sizes(self, reference_grouping):
        counts = {g: 0 for g in GROUP_ORDER}
        for group in reference_grouping.values():
            counts[group] += 1
        assert counts == {"Small": 12, "Mid": 6, "Large": 5}

    def test_sizes_cover_projects(self, reference_table):
        sizes = load_reference_sizes()
        assert set(sizes) == set(reference_table.projects())

    def test_external_path_loading(self, tmp_path):
        content = "project,method,mae,mdae\nX,M,1.5,1.0\n"
        path = tmp_path / "table.csv"
        path.write_text(content)
        table = load_reference_table(path)
        assert table.mae("X", "M") == 1.5
