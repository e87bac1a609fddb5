import numpy as np
import pytest
from scipy import stats

from hflab.ehr import Label, label_cohort
from hflab.errors import ConfigurationError
from hflab.synth import GeneratorConfig, SignalMode, generate, write_artifacts


def small_config(**over):
    base = dict(n_patients=400, seed=5, n_diag_concepts=60, n_med_concepts=20)
    base.update(over)
    return GeneratorConfig(**base)


class TestDeterminism:
    def test_same_seed_byte_identical_artifacts(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        write_artifacts(generate(small_config()), d1)
        write_artifacts(generate(small_config()), d2)
        for name in ("patients.jsonl", "ground_truth.csv", "grouping.tsv", "descriptions.tsv"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name

    def test_different_seed_differs(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        write_artifacts(generate(small_config(seed=5)), d1)
        write_artifacts(generate(small_config(seed=6)), d2)
        assert (d1 / "patients.jsonl").read_bytes() != (d2 / "patients.jsonl").read_bytes()


class TestRealizedFraction:
    def test_fraction_within_one_percent_at_scale(self):
        result = generate(small_config(n_patients=8000, case_fraction=0.125, seed=7))
        frac = sum(1 for t in result.truth if t.label == "CASE") / len(result.truth)
        assert 0.115 <= frac <= 0.135

    def test_timing_mode_exact_family_ratio(self):
        result = generate(small_config(n_patients=800, signal_mode=SignalMode.TIMING, case_fraction=0.125))
        labels = [t.label for t in result.truth]
        assert labels.count("CASE") / len(labels) == pytest.approx(0.125)


class TestAdmissibility:
    @pytest.mark.parametrize("mode", list(SignalMode))
    def test_label_cohort_agrees_with_ground_truth(self, mode):
        result = generate(small_config(signal_mode=mode))
        records, exclusions = label_cohort(
            result.patients, result.universe.hf_codes, result.universe.cancer_codes
        )
        assert not exclusions
        truth = {t.patient_id: t.label for t in result.truth}
        assert len(records) == len(result.patients)
        for rec in records:
            assert truth[rec.id] == rec.label.value


class TestTimingMode:
    def test_per_code_frequency_not_label_informative(self):
        # family construction makes per-class code patient-counts exactly
        # proportional, so no code shows a significant chi-square difference
        result = generate(small_config(n_patients=4000, signal_mode=SignalMode.TIMING, seed=3))
        truth = {t.patient_id: t.label for t in result.truth}
        n_case = sum(1 for t in result.truth if t.label == "CASE")
        n_non = len(result.truth) - n_case
        counts: dict[str, list[int]] = {}
        for p in result.patients:
            seen = set()
            for e in p.encounters:
                for c in e.diagnoses + e.medications:
                    seen.add(c.value)
            is_case = truth[p.id] == "CASE"
            for v in seen:
                row = counts.setdefault(v, [0, 0])
                row[0 if is_case else 1] += 1
        hf_values = {c.value for c in result.universe.hf_codes}
        for value, (k_case, k_non) in counts.items():
            if value in hf_values:
                continue  # the onset encounter itself is case-only by definition
            table = np.array([[k_case, n_case - k_case], [k_non, n_non - k_non]])
            if table.min() == 0:
                assert k_case == 0 or k_non > 0
                continue
            _, p_value, _, _ = stats.chi2_contingency(table)
            assert p_value > 0.01, f"code {value} differs between classes (p={p_value})"

    def test_history_multisets_match_within_family(self):
        result = generate(small_config(n_patients=160, signal_mode=SignalMode.TIMING, seed=9))
        records, _ = label_cohort(result.patients, result.universe.hf_codes, result.universe.cancer_codes)
        # gap distributions must differ by label while lengths match
        def gaps(rec):
            dates = [e.date for e in rec.history]
            return np.diff(dates)

        case_gaps = np.concatenate([gaps(r) for r in records if r.label == Label.CASE])
        non_gaps = np.concatenate([gaps(r) for r in records if r.label == Label.NONCASE])
        # ignore the long lead-in gap both classes share
        assert np.median(case_gaps[case_gaps < 150]) < np.median(non_gaps[non_gaps < 150])


class TestSynonymMode:
    def test_signal_code_rarity_and_shared_token(self):
        config = small_config(
            n_patients=2000, signal_mode=SignalMode.SYNONYM, n_synonym_codes=50, max_code_patients=9
        )
        result = generate(config)
        signal_values = {c.variants[0].value for c in result.universe.signal_meds}
        carrier_ids = {t.patient_id for t in result.truth if t.signal_carrier}
        per_code: dict[str, int] = {}
        carriers_seen = set()
        for p in result.patients:
            values = {c.value for e in p.encounters for c in e.medications}
            hits = values & signal_values
            if hits:
                carriers_seen.add(p.id)
                for v in hits:
                    per_code[v] = per_code.get(v, 0) + 1
        assert carriers_seen == carrier_ids
        assert max(per_code.values()) <= 9
        # every signal ingredient description carries the shared token
        for concept in result.universe.signal_meds:
            assert "cardiotoxin" in concept.description

    def test_infeasible_capacity_is_config_error(self):
        with pytest.raises(ConfigurationError):
            generate(
                small_config(
                    n_patients=4000,
                    signal_mode=SignalMode.SYNONYM,
                    n_synonym_codes=50,
                    max_code_patients=9,
                    signal_coverage=1.0,
                )
            ).patients

    def test_noncarriers_get_decoys(self):
        result = generate(small_config(n_patients=400, signal_mode=SignalMode.SYNONYM))
        decoy_values = {c.variants[0].value for c in result.universe.decoy_meds}
        carriers = {t.patient_id for t in result.truth if t.signal_carrier}
        for p in result.patients:
            values = {c.value for e in p.encounters for c in e.medications}
            if p.id not in carriers:
                assert values & decoy_values, f"{p.id} missing decoy"
            else:
                assert not values & decoy_values


class TestConfigValidation:
    def test_bad_fraction(self):
        with pytest.raises(ConfigurationError):
            generate(small_config(case_fraction=1.5))

    def test_timing_unreachable_fraction(self):
        with pytest.raises(ConfigurationError):
            generate(small_config(signal_mode=SignalMode.TIMING, case_fraction=0.3))
