import pytest

from hflab.ehr import (
    Code,
    CodeSystem,
    Encounter,
    ExclusionReason,
    Label,
    label_cohort,
    patient_from_dict,
    patient_to_dict,
    read_code_set_tsv,
    read_patients_jsonl,
    write_code_set_tsv,
    write_patients_jsonl,
)
from hflab.errors import ConfigurationError, DataError

from conftest import make_patient

HF = Code(CodeSystem.ICD10, "I50")
CANCER = Code(CodeSystem.ICD10, "C34")
OTHER = Code(CodeSystem.ICD10, "Z00")
HF_SET = {HF}
CANCER_SET = {CANCER}


def visit(day, codes=(OTHER,), meds=()):
    return Encounter(date=day, diagnoses=list(codes), medications=list(meds))


class TestLabelCohort:
    def test_case_with_history_censored_at_onset(self):
        # cancer day 0, HF day 400, visits 0/100/400 -> CASE, history = days 0,100
        p = make_patient("a", [visit(0, [CANCER]), visit(100), visit(400, [HF])])
        records, exclusions = label_cohort([p], HF_SET, CANCER_SET)
        assert not exclusions
        (rec,) = records
        assert rec.label == Label.CASE
        assert rec.index_date == 400
        assert [e.date for e in rec.history] == [0, 100]

    def test_hf_before_cancer_excluded(self):
        p = make_patient("a", [visit(0, [HF]), visit(50, [CANCER])])
        records, exclusions = label_cohort([p], HF_SET, CANCER_SET)
        assert not records
        assert exclusions[0].reason == ExclusionReason.HF_BEFORE_CANCER

    def test_hf_same_day_as_cancer_excluded(self):
        p = make_patient("a", [visit(0, [HF, CANCER]), visit(300)])
        _, exclusions = label_cohort([p], HF_SET, CANCER_SET)
        assert exclusions[0].reason == ExclusionReason.HF_BEFORE_CANCER

    def test_single_visit_excluded(self):
        p = make_patient("a", [visit(0, [CANCER])])
        records, exclusions = label_cohort([p], HF_SET, CANCER_SET)
        assert not records
        assert exclusions[0].reason == ExclusionReason.TOO_FEW_VISITS

    def test_gap_rule_exclusion(self):
        # cancer day 0, HF day 100, visits only at 0 and 100: 100 < 183
        p = make_patient("a", [visit(0, [CANCER]), visit(100, [HF])])
        _, exclusions = label_cohort([p], HF_SET, CANCER_SET)
        assert exclusions[0].reason == ExclusionReason.NO_GAP_VISIT

    def test_gap_rule_boundary_inclusive(self):
        p = make_patient("a", [visit(0, [CANCER]), visit(183, [HF])])
        records, _ = label_cohort([p], HF_SET, CANCER_SET)
        assert records and records[0].label == Label.CASE

    def test_noncase_uses_all_history(self):
        p = make_patient("a", [visit(0, [CANCER]), visit(90), visit(200)])
        (rec,), _ = label_cohort([p], HF_SET, CANCER_SET)
        assert rec.label == Label.NONCASE
        assert rec.index_date == 200
        assert len(rec.history) == 3

    def test_no_cancer_excluded(self):
        p = make_patient("a", [visit(0), visit(100)])
        _, exclusions = label_cohort([p], HF_SET, CANCER_SET)
        assert exclusions[0].reason == ExclusionReason.NO_CANCER

    def test_exhaustive_partition(self):
        patients = [
            make_patient("case", [visit(0, [CANCER]), visit(400, [HF])]),
            make_patient("non", [visit(0, [CANCER]), visit(100)]),
            make_patient("few", [visit(0, [CANCER])]),
            make_patient("nocancer", [visit(0), visit(10)]),
            make_patient("gap", [visit(0, [CANCER]), visit(50, [HF])]),
        ]
        records, exclusions = label_cohort(patients, HF_SET, CANCER_SET)
        labeled = {r.id for r in records}
        excluded = {e.patient_id for e in exclusions}
        assert labeled | excluded == {p.id for p in patients}
        assert not labeled & excluded

    def test_no_leakage(self):
        patients = [
            make_patient(f"p{i}", [visit(0, [CANCER]), visit(200 + 10 * i), visit(400 + 10 * i, [HF])])
            for i in range(5)
        ]
        records, _ = label_cohort(patients, HF_SET, CANCER_SET)
        for rec in records:
            assert max(e.date for e in rec.history) < rec.index_date

    def test_order_independence(self):
        patients = [
            make_patient("b", [visit(0, [CANCER]), visit(400, [HF])]),
            make_patient("a", [visit(0, [CANCER]), visit(100)]),
            make_patient("c", [visit(0, [CANCER]), visit(300)]),
        ]
        fwd, _ = label_cohort(patients, HF_SET, CANCER_SET)
        rev, _ = label_cohort(list(reversed(patients)), HF_SET, CANCER_SET)
        assert [(r.id, r.label, r.index_date) for r in fwd] == [(r.id, r.label, r.index_date) for r in rev]

    def test_unsorted_encounters_structural_error(self):
        p = make_patient("a", [visit(100, [CANCER]), visit(0)])
        with pytest.raises(DataError):
            label_cohort([p], HF_SET, CANCER_SET)

    def test_empty_code_sets_config_error(self):
        p = make_patient("a", [visit(0, [CANCER]), visit(100)])
        with pytest.raises(ConfigurationError):
            label_cohort([p], set(), CANCER_SET)

    def test_duplicate_ids_rejected(self):
        ps = [
            make_patient("a", [visit(0, [CANCER]), visit(100)]),
            make_patient("a", [visit(0, [CANCER]), visit(100)]),
        ]
        with pytest.raises(DataError):
            label_cohort(ps, HF_SET, CANCER_SET)


class TestInterchange:
    def test_patient_dict_roundtrip(self):
        p = make_patient("x1", [visit(0, [CANCER], [Code(CodeSystem.RXNORM_CLINICAL, "5")]), visit(9)])
        q = patient_from_dict(patient_to_dict(p))
        assert q.id == p.id
        assert q.demographics == p.demographics
        assert q.encounters == p.encounters

    def test_jsonl_roundtrip_and_determinism(self, tmp_path):
        patients = [make_patient(f"p{i}", [visit(0, [CANCER]), visit(10 * i + 5)]) for i in range(4)]
        path1, path2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_patients_jsonl(patients, path1)
        write_patients_jsonl(read_patients_jsonl(path1), path2)
        assert path1.read_bytes() == path2.read_bytes()

    def test_code_set_tsv_roundtrip(self, tmp_path):
        codes = {HF, CANCER, Code(CodeSystem.ICD9, "428.0")}
        path = tmp_path / "codes.tsv"
        write_code_set_tsv(codes, path)
        assert read_code_set_tsv(path) == codes

    def test_missing_file_is_data_error(self, tmp_path):
        with pytest.raises(DataError):
            read_patients_jsonl(tmp_path / "nope.jsonl")

    def test_empty_code_value_rejected(self):
        with pytest.raises(DataError):
            Code(CodeSystem.ICD10, "")

    def test_encounter_needs_some_code(self):
        with pytest.raises(DataError):
            Encounter(date=5)
