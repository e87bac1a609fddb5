"""Core EHR data types, cohort labeling rules, and JSONL/TSV interchange.

Dates are integer days since an arbitrary fixed epoch; only differences
between dates are ever interpreted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import ConfigurationError, DataError

DEFAULT_GAP_DAYS = 183  # "six months" pinned to a day count
DAYS_PER_YEAR = 365.25


class CodeSystem(str, Enum):
    ICD9 = "ICD9"
    ICD10 = "ICD10"
    RXNORM_CLINICAL = "RXNORM_CLINICAL"
    RXCUI_INGREDIENT = "RXCUI_INGREDIENT"
    PHEWAS = "PHEWAS"


DIAGNOSIS_SYSTEMS = {CodeSystem.ICD9, CodeSystem.ICD10, CodeSystem.PHEWAS}
MEDICATION_SYSTEMS = {CodeSystem.RXNORM_CLINICAL, CodeSystem.RXCUI_INGREDIENT}


class CancerType(str, Enum):
    LUNG = "LUNG"
    BREAST = "BREAST"
    COLORECTAL = "COLORECTAL"


class Label(str, Enum):
    CASE = "CASE"
    NONCASE = "NONCASE"


class ExclusionReason(str, Enum):
    TOO_FEW_VISITS = "TOO_FEW_VISITS"
    NO_CANCER = "NO_CANCER"
    HF_BEFORE_CANCER = "HF_BEFORE_CANCER"
    NO_GAP_VISIT = "NO_GAP_VISIT"


@dataclass(frozen=True, order=True)
class Code:
    system: CodeSystem
    value: str

    def __post_init__(self):
        if not self.value:
            raise DataError("Code value must be non-empty")

    def key(self) -> tuple[str, str]:
        return (self.system.value, self.value)


@dataclass
class Encounter:
    date: int
    diagnoses: list[Code] = field(default_factory=list)
    medications: list[Code] = field(default_factory=list)

    def __post_init__(self):
        if self.date < 0:
            raise DataError(f"Encounter date must be >= 0, got {self.date}")
        if not self.diagnoses and not self.medications:
            raise DataError("Encounter must carry at least one diagnosis or medication")


@dataclass
class Demographics:
    sex: str
    race: str
    ethnicity: str
    birth_offset: int  # days; age at date d is (d - birth_offset) / 365.25
    smoking_status: str
    cancer_types: frozenset[CancerType]

    def age_at(self, date: int) -> float:
        return (date - self.birth_offset) / DAYS_PER_YEAR


@dataclass
class Patient:
    id: str
    demographics: Demographics
    encounters: list[Encounter]

    def check_sorted(self):
        dates = [e.date for e in self.encounters]
        if any(b < a for a, b in zip(dates, dates[1:])):
            raise DataError(f"Patient {self.id}: encounters not sorted by date")


@dataclass
class CohortRecord:
    patient: Patient
    label: Label
    index_date: int
    history: list[Encounter]

    @property
    def id(self) -> str:
        return self.patient.id

    def age_at_index(self) -> float:
        return self.patient.demographics.age_at(self.index_date)


@dataclass
class Exclusion:
    patient_id: str
    reason: ExclusionReason


def _first_date_with_code(patient: Patient, codes: set[Code]) -> int | None:
    for enc in patient.encounters:
        if any(c in codes for c in enc.diagnoses):
            return enc.date
    return None


def label_cohort(
    patients: Iterable[Patient],
    hf_codes: set[Code],
    cancer_codes: set[Code],
    gap_days: int = DEFAULT_GAP_DAYS,
) -> tuple[list[CohortRecord], list[Exclusion]]:
    """Partition patients into CASE / NONCASE records and reasoned exclusions.

    CASE: cancer diagnosis, first HF strictly after the first cancer date,
    and some encounter at least ``gap_days`` before HF onset. History is
    censored strictly before the onset date. NONCASE: cancer present, no HF
    ever; index date is the last encounter. Everything else is excluded
    with a machine-readable reason. Output order is by patient id, so the
    result does not depend on input ordering.
    """
    if not hf_codes or not cancer_codes:
        raise ConfigurationError("hf_codes and cancer_codes must be non-empty")

    records: list[CohortRecord] = []
    exclusions: list[Exclusion] = []
    seen: set[str] = set()
    for patient in sorted(patients, key=lambda p: p.id):
        if patient.id in seen:
            raise DataError(f"Duplicate patient id {patient.id}")
        seen.add(patient.id)
        patient.check_sorted()

        if len(patient.encounters) < 2:
            exclusions.append(Exclusion(patient.id, ExclusionReason.TOO_FEW_VISITS))
            continue
        cancer_date = _first_date_with_code(patient, cancer_codes)
        if cancer_date is None:
            exclusions.append(Exclusion(patient.id, ExclusionReason.NO_CANCER))
            continue
        hf_date = _first_date_with_code(patient, hf_codes)
        if hf_date is None:
            records.append(
                CohortRecord(
                    patient=patient,
                    label=Label.NONCASE,
                    index_date=patient.encounters[-1].date,
                    history=list(patient.encounters),
                )
            )
            continue
        if hf_date <= cancer_date:
            exclusions.append(Exclusion(patient.id, ExclusionReason.HF_BEFORE_CANCER))
            continue
        if not any(hf_date - e.date >= gap_days for e in patient.encounters):
            exclusions.append(Exclusion(patient.id, ExclusionReason.NO_GAP_VISIT))
            continue
        history = [e for e in patient.encounters if e.date < hf_date]
        records.append(
            CohortRecord(
                patient=patient,
                label=Label.CASE,
                index_date=hf_date,
                history=history,
            )
        )
    return records, exclusions


# ---------------------------------------------------------------------------
# Interchange: patients as JSON Lines, code sets as TSV.
# ---------------------------------------------------------------------------


def _code_to_obj(code: Code) -> list[str]:
    return [code.system.value, code.value]


def _code_from_obj(obj) -> Code:
    return Code(CodeSystem(obj[0]), obj[1])


def patient_to_dict(patient: Patient) -> dict:
    d = patient.demographics
    return {
        "id": patient.id,
        "demographics": {
            "sex": d.sex,
            "race": d.race,
            "ethnicity": d.ethnicity,
            "birth_offset": d.birth_offset,
            "smoking_status": d.smoking_status,
            "cancer_types": sorted(t.value for t in d.cancer_types),
        },
        "encounters": [
            {
                "date": e.date,
                "diagnoses": [_code_to_obj(c) for c in e.diagnoses],
                "medications": [_code_to_obj(c) for c in e.medications],
            }
            for e in patient.encounters
        ],
    }


def patient_from_dict(obj: dict) -> Patient:
    try:
        demo = obj["demographics"]
        return Patient(
            id=obj["id"],
            demographics=Demographics(
                sex=demo["sex"],
                race=demo["race"],
                ethnicity=demo["ethnicity"],
                birth_offset=int(demo["birth_offset"]),
                smoking_status=demo["smoking_status"],
                cancer_types=frozenset(CancerType(t) for t in demo["cancer_types"]),
            ),
            encounters=[
                Encounter(
                    date=int(e["date"]),
                    diagnoses=[_code_from_obj(c) for c in e["diagnoses"]],
                    medications=[_code_from_obj(c) for c in e["medications"]],
                )
                for e in obj["encounters"]
            ],
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"Malformed patient record: {exc}") from exc


def write_patients_jsonl(patients: Iterable[Patient], path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        for patient in patients:
            fh.write(json.dumps(patient_to_dict(patient), sort_keys=True) + "\n")


def read_patients_jsonl(path: str | Path) -> list[Patient]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing patient file: {path}")
    patients = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                patients.append(patient_from_dict(json.loads(line)))
    return patients


def record_to_dict(record: CohortRecord) -> dict:
    obj = patient_to_dict(record.patient)
    return {
        "patient": obj,
        "label": record.label.value,
        "index_date": record.index_date,
        "history": [
            {
                "date": e.date,
                "diagnoses": [_code_to_obj(c) for c in e.diagnoses],
                "medications": [_code_to_obj(c) for c in e.medications],
            }
            for e in record.history
        ],
    }


def record_from_dict(obj: dict) -> CohortRecord:
    patient = patient_from_dict(obj["patient"])
    return CohortRecord(
        patient=patient,
        label=Label(obj["label"]),
        index_date=int(obj["index_date"]),
        history=[
            Encounter(
                date=int(e["date"]),
                diagnoses=[_code_from_obj(c) for c in e["diagnoses"]],
                medications=[_code_from_obj(c) for c in e["medications"]],
            )
            for e in obj["history"]
        ],
    )


def write_cohort_jsonl(records: Iterable[CohortRecord], path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), sort_keys=True) + "\n")


def read_cohort_jsonl(path: str | Path) -> list[CohortRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing cohort file: {path}")
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_dict(json.loads(line)))
    return records


def write_code_set_tsv(codes: Iterable[Code], path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        for code in sorted(codes):
            fh.write(f"{code.system.value}\t{code.value}\n")


def read_code_set_tsv(path: str | Path) -> set[Code]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing code set file: {path}")
    codes = set()
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{ln}: expected 2 tab-separated fields")
            codes.add(Code(CodeSystem(parts[0]), parts[1]))
    return codes
