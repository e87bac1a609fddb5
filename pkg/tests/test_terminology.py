import pytest

from hflab.ehr import Code, CodeSystem, Encounter
from hflab.errors import DataError
from hflab.terminology import (
    frequency_filter,
    group_code,
    read_descriptions_tsv,
    read_grouping_tsv,
    write_descriptions_tsv,
    write_grouping_tsv,
)

from conftest import make_record


class TestGroupCode:
    def test_icd_lookup(self, tiny_tables):
        grouping, _ = tiny_tables
        out = group_code(Code(CodeSystem.ICD10, "C34.1"), grouping)
        assert out == Code(CodeSystem.PHEWAS, "165.1")

    def test_unmapped_becomes_self_group(self, tiny_tables):
        grouping, _ = tiny_tables
        out = group_code(Code(CodeSystem.ICD10, "Z99.9"), grouping)
        assert out == Code(CodeSystem.PHEWAS, "Z99.9")
        assert grouping.unmapped_seen[("ICD10", "Z99.9")] == 1

    def test_medication_lookup(self, tiny_tables):
        grouping, _ = tiny_tables
        out = group_code(Code(CodeSystem.RXNORM_CLINICAL, "12345"), grouping)
        assert out == Code(CodeSystem.RXCUI_INGREDIENT, "999")

    def test_unmapped_medication_self_group(self, tiny_tables):
        grouping, _ = tiny_tables
        out = group_code(Code(CodeSystem.RXNORM_CLINICAL, "00"), grouping)
        assert out.system == CodeSystem.RXCUI_INGREDIENT

    def test_wrong_system_is_usage_error(self, tiny_tables):
        grouping, _ = tiny_tables
        with pytest.raises(ValueError):
            group_code(Code(CodeSystem.PHEWAS, "165.1"), grouping)


def _record_with(pid, diag_values, n_encounters=1):
    encounters = [
        Encounter(date=10 * d, diagnoses=[Code(CodeSystem.ICD10, v) for v in diag_values])
        for d in range(n_encounters)
    ]
    return make_record(pid, encounters)


class TestFrequencyFilter:
    def test_threshold_on_distinct_patients(self, tiny_tables):
        grouping, _ = tiny_tables
        # A in 12 patients, B in 9, C in 10; min 10 keeps {A, C}
        records = []
        for i in range(12):
            records.append(_record_with(f"a{i}", ["A"]))
        for i in range(9):
            records.append(_record_with(f"b{i}", ["B"]))
        for i in range(10):
            records.append(_record_with(f"c{i}", ["C"]))
        vocab = frequency_filter(records, grouping, min_patients=10)
        assert {c.value for c in vocab.diagnosis} == {"A", "C"}

    def test_all_below_threshold_empty(self, tiny_tables):
        grouping, _ = tiny_tables
        records = [_record_with("x", ["A"]), _record_with("y", ["B"])]
        vocab = frequency_filter(records, grouping, min_patients=10)
        assert vocab.diagnosis == [] and vocab.medication == []

    def test_repeat_encounters_count_once(self, tiny_tables):
        grouping, _ = tiny_tables
        # one patient with code A in 5 encounters: distinct-patient count is 1
        records = [_record_with("solo", ["A"], n_encounters=5)]
        vocab = frequency_filter(records, grouping, min_patients=2)
        assert vocab.diagnosis == []
        assert vocab.diagnosis_counts[Code(CodeSystem.PHEWAS, "A")] == 1

    def test_monotone_in_min_patients(self, tiny_tables):
        grouping, _ = tiny_tables
        records = [_record_with(f"p{i}", ["A"] if i % 2 else ["A", "B"]) for i in range(20)]
        kept = [
            {c.value for c in frequency_filter(records, grouping, min_patients=m).diagnosis}
            for m in (1, 5, 11, 25)
        ]
        for smaller, larger in zip(kept[1:], kept):
            assert smaller <= larger

    def test_grouped_vocab_never_larger_than_raw(self, tiny_tables):
        grouping, _ = tiny_tables
        # A01 and A02 share a group
        records = [_record_with(f"p{i}", ["A01", "A02", "B01"]) for i in range(5)]
        vocab = frequency_filter(records, grouping, min_patients=1)
        raw = {v for r in records for e in r.history for v in (c.value for c in e.diagnoses)}
        assert len(vocab.diagnosis) <= len(raw)
        assert {c.value for c in vocab.diagnosis} == {"grp-a", "grp-b"}

    def test_empty_cohort_warns_and_returns_empty(self, tiny_tables, caplog):
        grouping, _ = tiny_tables
        with caplog.at_level("WARNING"):
            vocab = frequency_filter([], grouping)
        assert vocab.diagnosis == [] and vocab.medication == []
        assert any("empty cohort" in m for m in caplog.messages)


class TestTableIO:
    def test_grouping_roundtrip(self, tiny_tables, tmp_path):
        grouping, _ = tiny_tables
        path = tmp_path / "g.tsv"
        write_grouping_tsv(grouping, path)
        loaded = read_grouping_tsv(path)
        assert loaded.entries == grouping.entries

    def test_descriptions_roundtrip_lowercases(self, tiny_tables, tmp_path):
        _, desc = tiny_tables
        path = tmp_path / "d.tsv"
        write_descriptions_tsv(desc, path)
        loaded = read_descriptions_tsv(path)
        assert loaded.entries == desc.entries

    def test_describe_fallback_flags_missing(self, tiny_tables):
        _, desc = tiny_tables
        text = desc.describe(Code(CodeSystem.PHEWAS, "UNKNOWN-1"))
        assert text == "unknown-1"
        assert ("PHEWAS", "UNKNOWN-1") in desc.missing_seen

    def test_missing_table_is_data_error(self, tmp_path):
        with pytest.raises(DataError):
            read_grouping_tsv(tmp_path / "nope.tsv")
        with pytest.raises(DataError):
            read_descriptions_tsv(tmp_path / "nope.tsv")
