import csv

import pytest

from hflab.density import DensityExtractor, feature_density, write_density_csv
from hflab.ehr import Code, CodeSystem, Encounter
from hflab.encoders import encode_narrative
from hflab.errors import ConfigurationError
from hflab.subword import build_vocab

from conftest import make_record


def icd(v):
    return Code(CodeSystem.ICD10, v)


@pytest.fixture
def cohort():
    return [
        make_record("p1", [Encounter(0, [icd("A01")]), Encounter(9, [icd("A01")])]),
        make_record("p2", [Encounter(0, [icd("A01"), icd("B01")]), Encounter(9, [icd("A02")])]),
        make_record("p3", [Encounter(0, [icd("A01")]), Encounter(5, [icd("B01")])]),
    ]


class TestCounting:
    def test_distinct_patient_counts(self, cohort, tiny_tables):
        grouping, _ = tiny_tables
        profile = feature_density(cohort, DensityExtractor.RAW_ICD, grouping=grouping)
        assert profile.entries[0] == ("A01", 3)
        assert dict(profile.entries)["B01"] == 2

    def test_grouping_merges_patient_sets(self, cohort, tiny_tables):
        grouping, _ = tiny_tables
        # A01 and A02 share grp-a: group count is the union of carriers
        profile = feature_density(cohort, DensityExtractor.PHEWAS, grouping=grouping)
        assert profile.entries[0] == ("grp-a", 3)

    def test_universal_token_tops_subword(self, cohort, tiny_tables):
        grouping, descriptions = tiny_tables
        narratives = [encode_narrative(r, grouping, descriptions) for r in cohort]
        vocab = build_vocab([v.text for v in narratives], target_size=400)
        profile = feature_density(
            cohort, DensityExtractor.SUBWORD, vocab=vocab, narratives=narratives
        )
        assert profile.entries[0][1] == len(cohort)

    def test_top_k_truncation(self, tiny_tables):
        grouping, _ = tiny_tables
        cohort = [
            make_record(f"p{i}", [Encounter(0, [icd(f"code-{j}") for j in range(i, i + 6)]), Encounter(4, [icd("X")])])
            for i in range(30)
        ]
        profile = feature_density(cohort, DensityExtractor.RAW_ICD, top_k=10, grouping=grouping)
        assert len(profile.entries) == 10

    def test_empty_cohort_empty_profile(self, tiny_tables):
        grouping, _ = tiny_tables
        assert feature_density([], DensityExtractor.RAW_ICD, grouping=grouping).entries == []

    def test_subword_requires_vocab(self, cohort):
        with pytest.raises(ConfigurationError):
            feature_density(cohort, DensityExtractor.SUBWORD)

    def test_ties_break_lexicographically(self, tiny_tables):
        grouping, _ = tiny_tables
        cohort = [make_record("p", [Encounter(0, [icd("zz"), icd("aa")]), Encounter(3, [icd("aa")])])]
        profile = feature_density(cohort, DensityExtractor.RAW_ICD, grouping=grouping)
        assert [f for f, _ in profile.entries] == ["aa", "zz"]


class TestTruncatedVariant:
    def test_window_flag_counts_model_input_only(self, cohort, tiny_tables):
        grouping, descriptions = tiny_tables
        narratives = [encode_narrative(r, grouping, descriptions) for r in cohort]
        vocab = build_vocab([v.text for v in narratives], target_size=400, max_len=6)
        full = feature_density(cohort, DensityExtractor.SUBWORD, vocab=vocab, narratives=narratives)
        windowed = feature_density(
            cohort, DensityExtractor.SUBWORD, vocab=vocab, narratives=narratives, truncate=True
        )
        assert len(windowed.entries) < len(full.entries)


class TestExport:
    def test_csv_shape(self, cohort, tiny_tables, tmp_path):
        grouping, _ = tiny_tables
        profile = feature_density(cohort, DensityExtractor.RAW_ICD, grouping=grouping)
        path = tmp_path / "density.csv"
        write_density_csv(profile, path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0] == {"rank": "1", "feature": "A01", "unique_patients": "3", "encoding": "RAW_ICD"}
