import numpy as np
import pytest

from hflab.ehr import (
    CancerType,
    Code,
    CodeSystem,
    CohortRecord,
    Demographics,
    Encounter,
    Label,
    Patient,
)
from hflab.terminology import DescriptionTable, GroupingTable


def make_demo(**over):
    base = dict(
        sex="female",
        race="white",
        ethnicity="not hispanic or latino",
        birth_offset=-23000,
        smoking_status="never",
        cancer_types=frozenset({CancerType.LUNG}),
    )
    base.update(over)
    return Demographics(**base)


def dx(system, value):
    return Code(CodeSystem[system], value)


def make_patient(pid, encounters, **demo_over):
    return Patient(id=pid, demographics=make_demo(**demo_over), encounters=encounters)


def make_record(pid, encounters, label=Label.NONCASE, index_date=None, **demo_over):
    patient = make_patient(pid, encounters, **demo_over)
    return CohortRecord(
        patient=patient,
        label=label,
        index_date=encounters[-1].date if index_date is None else index_date,
        history=list(encounters),
    )


@pytest.fixture
def tiny_tables():
    grouping = GroupingTable(
        entries={
            ("ICD10", "C34.1"): Code(CodeSystem.PHEWAS, "165.1"),
            ("ICD10", "A01"): Code(CodeSystem.PHEWAS, "grp-a"),
            ("ICD10", "A02"): Code(CodeSystem.PHEWAS, "grp-a"),
            ("ICD10", "B01"): Code(CodeSystem.PHEWAS, "grp-b"),
            ("ICD9", "C01"): Code(CodeSystem.PHEWAS, "grp-c"),
            ("RXNORM_CLINICAL", "12345"): Code(CodeSystem.RXCUI_INGREDIENT, "999"),
            ("RXNORM_CLINICAL", "777"): Code(CodeSystem.RXCUI_INGREDIENT, "888"),
        },
        provenance="test fixture",
    )
    descriptions = DescriptionTable(
        entries={
            ("PHEWAS", "165.1"): "malignant neoplasm of bronchus",
            ("PHEWAS", "grp-a"): "acute renal lesion",
            ("PHEWAS", "grp-b"): "chronic cardiac edema",
            ("PHEWAS", "grp-c"): "focal hepatic fibrosis",
            ("RXCUI_INGREDIENT", "999"): "valeprine oral tablet",
            ("RXCUI_INGREDIENT", "888"): "norolide oral tablet",
        }
    )
    return grouping, descriptions


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
