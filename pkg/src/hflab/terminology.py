"""Code grouping, official descriptions, and patient-level frequency filtering.

Grouping tables map raw diagnosis codes to phenotype groups and clinical
drug codes to ingredient-level codes. Tables are immutable after load and
injectable; the repo ships only synthetic fixtures.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .ehr import (
    DIAGNOSIS_SYSTEMS,
    Code,
    CodeSystem,
    CohortRecord,
)
from .errors import DataError

log = logging.getLogger(__name__)

GROUPABLE_SYSTEMS = {CodeSystem.ICD9, CodeSystem.ICD10, CodeSystem.RXNORM_CLINICAL}
DEFAULT_MIN_PATIENTS = 10


@dataclass
class GroupingTable:
    entries: dict[tuple[str, str], Code]
    provenance: str = ""
    unmapped_seen: dict[tuple[str, str], int] = field(default_factory=dict)

    def lookup(self, code: Code) -> Code | None:
        return self.entries.get(code.key())


@dataclass
class DescriptionTable:
    entries: dict[tuple[str, str], str]
    missing_seen: dict[tuple[str, str], int] = field(default_factory=dict)

    def describe(self, code: Code) -> str:
        """Lowercased description, or the literal code value when unknown."""
        text = self.entries.get(code.key())
        if text is None:
            self.missing_seen[code.key()] = self.missing_seen.get(code.key(), 0) + 1
            return code.value.lower()
        return text


def group_code(code: Code, table: GroupingTable) -> Code:
    """Map a raw code to its group; unmapped codes become singleton self-groups.

    Misses are counted on the table for audit output rather than dropped.
    """
    if code.system not in GROUPABLE_SYSTEMS:
        raise ValueError(f"group_code expects a raw code system, got {code.system.value}")
    grouped = table.lookup(code)
    if grouped is not None:
        return grouped
    table.unmapped_seen[code.key()] = table.unmapped_seen.get(code.key(), 0) + 1
    if code.system in DIAGNOSIS_SYSTEMS:
        return Code(CodeSystem.PHEWAS, code.value)
    return Code(CodeSystem.RXCUI_INGREDIENT, code.value)


def grouped_history_codes(record: CohortRecord, table: GroupingTable) -> tuple[set[Code], set[Code]]:
    """Distinct grouped (diagnosis, medication) codes over a record's history."""
    diag: set[Code] = set()
    med: set[Code] = set()
    for enc in record.history:
        diag.update(group_code(c, table) for c in enc.diagnoses)
        med.update(group_code(c, table) for c in enc.medications)
    return diag, med


@dataclass
class FilteredVocabulary:
    """Grouped codes retained by the distinct-patient frequency filter."""

    diagnosis: list[Code]
    medication: list[Code]
    diagnosis_counts: dict[Code, int]
    medication_counts: dict[Code, int]
    min_patients: int

    @property
    def diagnosis_index(self) -> dict[Code, int]:
        return {c: i for i, c in enumerate(self.diagnosis)}

    @property
    def medication_index(self) -> dict[Code, int]:
        return {c: i for i, c in enumerate(self.medication)}


def frequency_filter(
    cohort: Iterable[CohortRecord],
    table: GroupingTable,
    min_patients: int = DEFAULT_MIN_PATIENTS,
) -> FilteredVocabulary:
    """Retain grouped codes carried by at least ``min_patients`` distinct patients.

    Counts are distinct patients, not encounters. Returns separate diagnosis
    and medication vocabularies in deterministic (count desc, code asc) order.
    """
    if min_patients < 1:
        raise ValueError("min_patients must be >= 1")
    diag_counts: dict[Code, int] = {}
    med_counts: dict[Code, int] = {}
    n = 0
    for record in cohort:
        n += 1
        diag, med = grouped_history_codes(record, table)
        for c in diag:
            diag_counts[c] = diag_counts.get(c, 0) + 1
        for c in med:
            med_counts[c] = med_counts.get(c, 0) + 1
    if n == 0:
        log.warning("frequency_filter: empty cohort, returning empty vocabularies")

    def retained(counts: dict[Code, int]) -> list[Code]:
        kept = [c for c, k in counts.items() if k >= min_patients]
        return sorted(kept, key=lambda c: (-counts[c], c))

    diag_vocab = retained(diag_counts)
    med_vocab = retained(med_counts)
    if n > 0 and not diag_vocab and not med_vocab:
        log.warning("frequency_filter: no code met min_patients=%d", min_patients)
    return FilteredVocabulary(
        diagnosis=diag_vocab,
        medication=med_vocab,
        diagnosis_counts=diag_counts,
        medication_counts=med_counts,
        min_patients=min_patients,
    )


# ---------------------------------------------------------------------------
# TSV interchange (UTF-8): grouping (src_system, src_value, dst_system,
# dst_value) and descriptions (system, value, text).
# ---------------------------------------------------------------------------


def write_grouping_tsv(table: GroupingTable, path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        for (src_sys, src_val), dst in sorted(table.entries.items()):
            fh.write(f"{src_sys}\t{src_val}\t{dst.system.value}\t{dst.value}\n")


def read_grouping_tsv(path: str | Path, provenance: str = "") -> GroupingTable:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing grouping table: {path}")
    entries: dict[tuple[str, str], Code] = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{ln}: expected 4 tab-separated fields")
            dst = Code(CodeSystem(parts[2]), parts[3])
            if dst.system not in (CodeSystem.PHEWAS, CodeSystem.RXCUI_INGREDIENT):
                raise DataError(f"{path}:{ln}: grouped system must be PHEWAS or RXCUI_INGREDIENT")
            entries[(parts[0], parts[1])] = dst
    return GroupingTable(entries=entries, provenance=provenance or str(path))


def write_descriptions_tsv(table: DescriptionTable, path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        for (system, value), text in sorted(table.entries.items()):
            fh.write(f"{system}\t{value}\t{text}\n")


def read_descriptions_tsv(path: str | Path) -> DescriptionTable:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing description table: {path}")
    entries: dict[tuple[str, str], str] = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[2]:
                raise DataError(f"{path}:{ln}: expected 3 tab-separated fields with non-empty text")
            entries[(parts[0], parts[1])] = parts[2].lower()
    return DescriptionTable(entries=entries)
