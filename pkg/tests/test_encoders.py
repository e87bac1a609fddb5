import numpy as np
import pytest

from hflab.ehr import CancerType, Code, CodeSystem, Encounter, Label
from hflab.encoders import (
    FeatureCombo,
    OneHotVocab,
    SequenceSpec,
    SequenceTooShortError,
    bucket_minibatches,
    build_all_sequences,
    build_sequences,
    demographics_sentence,
    encode_narrative,
    encode_onehot,
    read_narratives_jsonl,
    write_narratives_jsonl,
)
from hflab.errors import DataError
from hflab.terminology import frequency_filter

from conftest import make_record


def icd(v):
    return Code(CodeSystem.ICD10, v)


def rx(v):
    return Code(CodeSystem.RXNORM_CLINICAL, v)


@pytest.fixture
def fitted(tiny_tables):
    grouping, descriptions = tiny_tables
    records = [
        make_record(f"t{i}", [Encounter(0, [icd("A01")], [rx("12345")]), Encounter(30, [icd("B01")])])
        for i in range(3)
    ]
    vocab = frequency_filter(records, grouping, min_patients=1)
    onehot = OneHotVocab.fit(records, vocab, grouping, FeatureCombo.DIAG_MED_DEMO)
    return grouping, descriptions, vocab, onehot


class TestOneHot:
    def test_membership_bits(self, fitted):
        grouping, _, vocab, onehot = fitted
        rec = make_record("x", [Encounter(0, [icd("A01")]), Encounter(10, [icd("B01")])])
        view = encode_onehot(rec, onehot)
        ndiag = len(vocab.diagnosis)
        diag_block = view.values[:ndiag]
        by_code = dict(zip([c.value for c in vocab.diagnosis], diag_block))
        assert by_code["grp-a"] == 1.0 and by_code["grp-b"] == 1.0

    def test_unretained_codes_zero_block(self, fitted):
        grouping, _, vocab, onehot = fitted
        rec = make_record("x", [Encounter(0, [icd("ZZZ")]), Encounter(5, [icd("YYY")])])
        view = encode_onehot(rec, onehot)
        ncodes = len(vocab.diagnosis) + len(vocab.medication)
        assert not view.values[:ncodes].any()

    def test_age_standardization(self, fitted):
        # age 64 with training mean 62 and std 10 -> 0.2
        _, _, _, onehot = fitted
        onehot.demo.age_mean, onehot.demo.age_std = 62.0, 10.0
        rec = make_record("x", [Encounter(0, [icd("A01")]), Encounter(10, [icd("B01")])])
        rec.patient.demographics.birth_offset = int(rec.index_date - 64 * 365.25)
        view = encode_onehot(rec, onehot)
        assert view.age == pytest.approx(0.2, abs=1e-3)

    def test_diag_only_combo_drops_blocks(self, fitted):
        grouping, _, vocab, _ = fitted
        records = [make_record("t", [Encounter(0, [icd("A01")], [rx("12345")]), Encounter(3, [icd("B01")])])]
        small = OneHotVocab.fit(records, vocab, grouping, FeatureCombo.DIAG)
        view = encode_onehot(records[0], small)
        assert len(view.values) == len(vocab.diagnosis)
        assert view.age == 0.0


class TestSequences:
    def test_elapsed_days(self, fitted):
        grouping, _, vocab, onehot = fitted
        spec = SequenceSpec(vocab=vocab, grouping=grouping, demo=onehot.demo)
        rec = make_record(
            "x",
            [Encounter(10, [icd("A01")]), Encounter(40, [icd("B01")]), Encounter(100, [icd("A02")])],
        )
        view = build_sequences(rec, spec)
        assert view.elapsed.tolist() == [0.0, 30.0, 60.0]

    def test_same_day_visits(self, fitted):
        grouping, _, vocab, onehot = fitted
        spec = SequenceSpec(vocab=vocab, grouping=grouping, demo=onehot.demo)
        rec = make_record("x", [Encounter(7, [icd("A01")]), Encounter(7, [icd("B01")])])
        assert build_sequences(rec, spec).elapsed.tolist() == [0.0, 0.0]

    def test_empty_visits_dropped(self, fitted):
        grouping, _, vocab, onehot = fitted
        spec = SequenceSpec(vocab=vocab, grouping=grouping, demo=onehot.demo)
        rec = make_record(
            "x",
            [Encounter(0, [icd("A01")]), Encounter(10, [icd("UNSEEN")]), Encounter(30, [icd("B01")])],
        )
        view = build_sequences(rec, spec)
        assert view.seq_len == 2
        assert view.elapsed.tolist() == [0.0, 30.0]

    def test_too_short_raises_and_collected(self, fitted):
        grouping, _, vocab, onehot = fitted
        spec = SequenceSpec(vocab=vocab, grouping=grouping, demo=onehot.demo)
        rec = make_record("solo", [Encounter(0, [icd("A01")]), Encounter(5, [icd("UNSEEN")])])
        with pytest.raises(SequenceTooShortError):
            build_sequences(rec, spec)
        good = make_record("ok", [Encounter(0, [icd("A01")]), Encounter(5, [icd("B01")])])
        views, dropped = build_all_sequences([rec, good], spec)
        assert [v.patient_id for v in views] == ["ok"]
        assert dropped == ["solo"]

    def test_view_consistency_with_onehot(self, fitted, rng):
        # support of the one-hot code block equals the union of sequence steps
        grouping, _, vocab, onehot = fitted
        spec = SequenceSpec(vocab=vocab, grouping=grouping, demo=onehot.demo)
        pool = ["A01", "A02", "B01", "C34.1", "UNSEEN"]
        for trial in range(25):
            n_visits = int(rng.integers(2, 6))
            encounters = []
            for v in range(n_visits):
                k = int(rng.integers(1, 4))
                codes = [icd(pool[int(i)]) for i in rng.integers(0, len(pool), size=k)]
                encounters.append(Encounter(10 * v, codes))
            rec = make_record(f"r{trial}", encounters)
            onehot_view = encode_onehot(rec, onehot)
            ncode = len(vocab.diagnosis) + len(vocab.medication)
            try:
                seq = build_sequences(rec, spec)
            except SequenceTooShortError:
                continue
            support = (seq.steps[:, :ncode].sum(axis=0) > 0).astype(float)
            assert np.array_equal(support, onehot_view.values[:ncode])


class TestBucketing:
    def _views(self, lengths):
        out = []
        for i, L in enumerate(lengths):
            out.append(
                type(
                    "V",
                    (),
                    {
                        "steps": np.zeros((L, 2)),
                        "elapsed": np.zeros(L),
                        "label": Label.CASE if i % 2 else Label.NONCASE,
                        "patient_id": f"p{i}",
                        "seq_len": L,
                    },
                )()
            )
        return out

    def test_grouping_by_length(self):
        batches = bucket_minibatches(self._views([2, 2, 3]), max_batch=32)
        assert [(b.seq_len, len(b.patient_ids)) for b in batches] == [(2, 2), (3, 1)]

    def test_splitting_at_max_batch(self):
        batches = bucket_minibatches(self._views([5] * 40), max_batch=32)
        assert [len(b.patient_ids) for b in batches] == [32, 8]

    def test_empty_input(self):
        assert bucket_minibatches([], max_batch=8) == []

    def test_every_sequence_once_deterministic(self):
        views = self._views([3, 2, 4, 2, 3, 2])
        batches = bucket_minibatches(views, max_batch=2)
        ids = [pid for b in batches for pid in b.patient_ids]
        assert sorted(ids) == sorted(v.patient_id for v in views)
        # stable input order within a length
        assert ids == ["p1", "p3", "p5", "p0", "p4", "p2"]


class TestNarrative:
    def test_golden_demographics_sentence(self, tiny_tables):
        rec = make_record(
            "x",
            [Encounter(0, [icd("A01")])],
            cancer_types=frozenset({CancerType.LUNG}),
        )
        rec.patient.demographics.birth_offset = int(rec.index_date - 64.5 * 365.25)
        assert (
            demographics_sentence(rec)
            == "the patient is a 64 year old white female, not hispanic or latino, never smoker, with lung cancer."
        )

    def test_multi_cancer_phrase(self, tiny_tables):
        rec = make_record(
            "x",
            [Encounter(0, [icd("A01")])],
            cancer_types=frozenset({CancerType.LUNG, CancerType.BREAST}),
        )
        assert "with breast cancer and lung cancer." in demographics_sentence(rec)

    def test_last_occurrence_ordering(self, tiny_tables):
        grouping, descriptions = tiny_tables
        # A at visits 1 and 3, B at visit 2 -> section order B_desc, A_desc
        rec = make_record(
            "x",
            [Encounter(0, [icd("A01")]), Encounter(10, [icd("B01")]), Encounter(20, [icd("A01")])],
        )
        view = encode_narrative(rec, grouping, descriptions)
        dx_section = view.text.split(" ; ")[1]
        assert dx_section == "chronic cardiac edema, acute renal lesion"

    def test_no_medications_single_separator(self, tiny_tables):
        grouping, descriptions = tiny_tables
        rec = make_record("x", [Encounter(0, [icd("A01")]), Encounter(5, [icd("B01")])])
        view = encode_narrative(rec, grouping, descriptions)
        assert view.text.count(" ; ") == 1
        assert view.text.endswith("acute renal lesion, chronic cardiac edema")

    def test_missing_description_falls_back_flagged(self, tiny_tables):
        grouping, descriptions = tiny_tables
        rec = make_record("x", [Encounter(0, [icd("MYSTERY")])])
        view = encode_narrative(rec, grouping, descriptions)
        assert "mystery" in view.text
        assert view.missing_descriptions == ["MYSTERY"]

    def test_empty_history_error(self, tiny_tables):
        grouping, descriptions = tiny_tables
        rec = make_record("x", [Encounter(0, [icd("A01")])])
        rec.history = []
        with pytest.raises(DataError):
            encode_narrative(rec, grouping, descriptions)

    def test_byte_identical_determinism(self, tiny_tables, tmp_path):
        grouping, descriptions = tiny_tables
        recs = [
            make_record(f"r{i}", [Encounter(0, [icd("A01")], [rx("12345")]), Encounter(9, [icd("B01")])])
            for i in range(3)
        ]
        views1 = [encode_narrative(r, grouping, descriptions) for r in recs]
        views2 = [encode_narrative(r, grouping, descriptions) for r in recs]
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_narratives_jsonl(views1, p1)
        write_narratives_jsonl(views2, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert [v.text for v in read_narratives_jsonl(p1)] == [v.text for v in views1]

    def test_diag_only_combo(self, tiny_tables):
        grouping, descriptions = tiny_tables
        rec = make_record("x", [Encounter(0, [icd("A01")], [rx("12345")]), Encounter(4, [icd("B01")])])
        view = encode_narrative(rec, grouping, descriptions, FeatureCombo.DIAG)
        assert "patient" not in view.text
        assert "valeprine" not in view.text
