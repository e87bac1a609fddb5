"""The three competing feature views of a cohort record.

* one-hot: binary membership vector over the retained grouped vocabulary,
  demographic indicator block, and standardized age.
* sequence: per-visit multi-hot vectors ordered by encounter time with
  elapsed days between visits.
* narrative: demographics sentence plus code descriptions serialized in
  last-occurrence order.

All encoders are pure given a fitted vocabulary and the terminology tables.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ehr import CancerType, CohortRecord, Label
from .errors import DataError
from .terminology import DescriptionTable, FilteredVocabulary, GroupingTable, group_code


class FeatureCombo(str, Enum):
    """Which information blocks a view includes."""

    DIAG = "DIAG"
    DIAG_DEMO = "DIAG_DEMO"
    DIAG_MED_DEMO = "DIAG_MED_DEMO"

    @property
    def with_medications(self) -> bool:
        return self == FeatureCombo.DIAG_MED_DEMO

    @property
    def with_demographics(self) -> bool:
        return self != FeatureCombo.DIAG


_DEMO_FIELDS = ("sex", "race", "ethnicity", "smoking_status")


@dataclass
class DemographicsEncoder:
    """Category indicator block plus age standardized by training statistics."""

    levels: dict[str, list[str]]
    age_mean: float
    age_std: float

    @classmethod
    def fit(cls, records: Sequence[CohortRecord]) -> "DemographicsEncoder":
        levels = {f: set() for f in _DEMO_FIELDS}
        ages = []
        for r in records:
            d = r.patient.demographics
            for f in _DEMO_FIELDS:
                levels[f].add(getattr(d, f))
            ages.append(r.age_at_index())
        ages = np.asarray(ages, dtype=float)
        std = float(ages.std()) if len(ages) else 1.0
        return cls(
            levels={f: sorted(v) for f, v in levels.items()},
            age_mean=float(ages.mean()) if len(ages) else 0.0,
            age_std=std if std > 0 else 1.0,
        )

    @property
    def dim(self) -> int:
        return sum(len(v) for v in self.levels.values()) + len(CancerType)

    def indicator_block(self, record: CohortRecord) -> np.ndarray:
        d = record.patient.demographics
        parts = []
        for f in _DEMO_FIELDS:
            block = np.zeros(len(self.levels[f]))
            value = getattr(d, f)
            if value in self.levels[f]:
                block[self.levels[f].index(value)] = 1.0
            parts.append(block)
        cancer = np.zeros(len(CancerType))
        for i, ct in enumerate(sorted(CancerType, key=lambda c: c.value)):
            if ct in d.cancer_types:
                cancer[i] = 1.0
        parts.append(cancer)
        return np.concatenate(parts)

    def standardized_age(self, record: CohortRecord) -> float:
        return (record.age_at_index() - self.age_mean) / self.age_std

    def to_dict(self) -> dict:
        return {"levels": self.levels, "age_mean": self.age_mean, "age_std": self.age_std}

    @classmethod
    def from_dict(cls, obj: dict) -> "DemographicsEncoder":
        return cls(levels=obj["levels"], age_mean=obj["age_mean"], age_std=obj["age_std"])


# ---------------------------------------------------------------------------
# One-hot view.
# ---------------------------------------------------------------------------


@dataclass
class OneHotView:
    values: np.ndarray  # binary blocks: diagnosis | medication | demographics
    age: float
    label: Label
    patient_id: str

    def dense(self) -> np.ndarray:
        return np.concatenate([self.values, [self.age]])


@dataclass
class OneHotVocab:
    vocab: FilteredVocabulary
    grouping: GroupingTable
    demo: DemographicsEncoder
    combo: FeatureCombo = FeatureCombo.DIAG_MED_DEMO

    @classmethod
    def fit(
        cls,
        train_records: Sequence[CohortRecord],
        vocab: FilteredVocabulary,
        grouping: GroupingTable,
        combo: FeatureCombo = FeatureCombo.DIAG_MED_DEMO,
    ) -> "OneHotVocab":
        """Demographic levels and age statistics come from the training split only."""
        if not train_records:
            raise ValueError("cannot fit a one-hot vocabulary on an empty training split")
        return cls(vocab=vocab, grouping=grouping, demo=DemographicsEncoder.fit(train_records), combo=combo)

    @property
    def dim(self) -> int:
        d = len(self.vocab.diagnosis)
        if self.combo.with_medications:
            d += len(self.vocab.medication)
        if self.combo.with_demographics:
            d += self.demo.dim
        return d + 1  # age slot

    def feature_names(self) -> list[str]:
        names = [f"dx:{c.value}" for c in self.vocab.diagnosis]
        if self.combo.with_medications:
            names += [f"rx:{c.value}" for c in self.vocab.medication]
        if self.combo.with_demographics:
            for f in _DEMO_FIELDS:
                names += [f"demo:{f}={v}" for v in self.demo.levels[f]]
            names += [f"demo:cancer={ct.value}" for ct in sorted(CancerType, key=lambda c: c.value)]
        names.append("age_std")
        return names


def encode_onehot(record: CohortRecord, vocab: OneHotVocab) -> OneHotView:
    """Binary membership over the fitted vocabulary; 1 iff the grouped code
    occurs anywhere in the record's history."""
    if vocab.demo is None:
        raise ValueError("one-hot vocabulary is not fitted")
    diag_idx = vocab.vocab.diagnosis_index
    med_idx = vocab.vocab.medication_index
    diag = np.zeros(len(vocab.vocab.diagnosis))
    med = np.zeros(len(vocab.vocab.medication))
    for enc in record.history:
        for c in enc.diagnoses:
            i = diag_idx.get(group_code(c, vocab.grouping))
            if i is not None:
                diag[i] = 1.0
        for c in enc.medications:
            i = med_idx.get(group_code(c, vocab.grouping))
            if i is not None:
                med[i] = 1.0
    parts = [diag]
    if vocab.combo.with_medications:
        parts.append(med)
    if vocab.combo.with_demographics:
        parts.append(vocab.demo.indicator_block(record))
    return OneHotView(
        values=np.concatenate(parts),
        age=vocab.demo.standardized_age(record) if vocab.combo.with_demographics else 0.0,
        label=record.label,
        patient_id=record.id,
    )


def onehot_matrix(views: Sequence[OneHotView]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([v.dense() for v in views])
    y = np.array([1.0 if v.label == Label.CASE else 0.0 for v in views])
    return X, y


def write_onehot_csv(views: Sequence[OneHotView], vocab: OneHotVocab, path: str | Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "label"] + vocab.feature_names())
        for v in views:
            row = [v.patient_id, v.label.value]
            row += [f"{x:g}" for x in v.values]
            row.append(f"{v.age:.6f}")
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Sequence view.
# ---------------------------------------------------------------------------


class SequenceTooShortError(DataError):
    """Record has fewer than two encounters with retained codes."""


@dataclass
class SequenceSpec:
    vocab: FilteredVocabulary
    grouping: GroupingTable
    demo: DemographicsEncoder | None = None  # appended per step when present
    combo: FeatureCombo = FeatureCombo.DIAG_MED_DEMO

    @property
    def input_dim(self) -> int:
        d = len(self.vocab.diagnosis)
        if self.combo.with_medications:
            d += len(self.vocab.medication)
        if self.combo.with_demographics:
            if self.demo is None:
                raise ValueError("combo includes demographics but no encoder was fitted")
            d += self.demo.dim + 1
        return d


@dataclass
class SequenceView:
    steps: np.ndarray  # (seq_len, input_dim) multi-hot per visit
    elapsed: np.ndarray  # (seq_len,) days since previous step, first is 0
    label: Label
    patient_id: str

    @property
    def seq_len(self) -> int:
        return len(self.elapsed)


@dataclass
class SequenceBatch:
    x: np.ndarray  # (batch, seq_len, input_dim)
    elapsed: np.ndarray  # (batch, seq_len)
    y: np.ndarray  # (batch,)
    patient_ids: list[str]

    @property
    def seq_len(self) -> int:
        return self.x.shape[1]


def build_sequences(record: CohortRecord, spec: SequenceSpec) -> SequenceView:
    """One step per encounter that retains at least one vocabulary code.

    elapsed[t] = date[t] - date[t-1] with elapsed[0] = 0. Raises
    SequenceTooShortError when fewer than two usable encounters remain.
    """
    diag_idx = spec.vocab.diagnosis_index
    med_idx = spec.vocab.medication_index
    n_diag = len(spec.vocab.diagnosis)
    n_med = len(spec.vocab.medication) if spec.combo.with_medications else 0
    demo_block = None
    if spec.combo.with_demographics:
        if spec.demo is None:
            raise ValueError("combo includes demographics but no encoder was fitted")
        demo_block = np.concatenate(
            [spec.demo.indicator_block(record), [spec.demo.standardized_age(record)]]
        )

    steps = []
    dates = []
    for enc in record.history:
        vec = np.zeros(n_diag + n_med)
        hit = False
        for c in enc.diagnoses:
            i = diag_idx.get(group_code(c, spec.grouping))
            if i is not None:
                vec[i] = 1.0
                hit = True
        if spec.combo.with_medications:
            for c in enc.medications:
                i = med_idx.get(group_code(c, spec.grouping))
                if i is not None:
                    vec[n_diag + i] = 1.0
                    hit = True
        if not hit:
            continue
        steps.append(np.concatenate([vec, demo_block]) if demo_block is not None else vec)
        dates.append(enc.date)

    if len(steps) < 2:
        raise SequenceTooShortError(
            f"patient {record.id}: {len(steps)} usable encounters (need >= 2)"
        )
    elapsed = np.zeros(len(dates))
    elapsed[1:] = np.diff(np.asarray(dates, dtype=float))
    return SequenceView(
        steps=np.stack(steps),
        elapsed=elapsed,
        label=record.label,
        patient_id=record.id,
    )


def build_all_sequences(
    records: Iterable[CohortRecord], spec: SequenceSpec
) -> tuple[list[SequenceView], list[str]]:
    """Encode every record, collecting ids of records too short to sequence."""
    views, dropped = [], []
    for record in records:
        try:
            views.append(build_sequences(record, spec))
        except SequenceTooShortError:
            dropped.append(record.id)
    return views, dropped


def bucket_minibatches(seqs: Sequence[SequenceView], max_batch: int) -> list[SequenceBatch]:
    """Group sequences of equal length into batches of at most max_batch.

    Deterministic: lengths ascending, stable input order within a length.
    """
    if max_batch < 1:
        raise ValueError("max_batch must be >= 1")
    by_len: dict[int, list[SequenceView]] = {}
    for s in seqs:
        by_len.setdefault(s.seq_len, []).append(s)
    batches = []
    for length in sorted(by_len):
        group = by_len[length]
        for start in range(0, len(group), max_batch):
            chunk = group[start : start + max_batch]
            batches.append(
                SequenceBatch(
                    x=np.stack([s.steps for s in chunk]),
                    elapsed=np.stack([s.elapsed for s in chunk]),
                    y=np.array([1.0 if s.label == Label.CASE else 0.0 for s in chunk]),
                    patient_ids=[s.patient_id for s in chunk],
                )
            )
    return batches


# ---------------------------------------------------------------------------
# Narrative view.
# ---------------------------------------------------------------------------

SECTION_SEPARATOR = " ; "

# Fixed demographics sentence; golden tests pin the exact rendering.
_DEMO_TEMPLATE = "the patient is a {age} year old {race} {sex}, {ethnicity}, {smoking} smoker, with {cancers}."


@dataclass
class NarrativeView:
    text: str
    label: Label
    patient_id: str
    missing_descriptions: list[str] = field(default_factory=list)


def _cancer_phrase(cancer_types: frozenset[CancerType]) -> str:
    names = [f"{ct.value.lower()} cancer" for ct in sorted(cancer_types, key=lambda c: c.value)]
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def demographics_sentence(record: CohortRecord) -> str:
    d = record.patient.demographics
    return _DEMO_TEMPLATE.format(
        age=int(record.age_at_index()),
        race=d.race,
        sex=d.sex,
        ethnicity=d.ethnicity,
        smoking=d.smoking_status,
        cancers=_cancer_phrase(d.cancer_types),
    )


def _last_occurrence_order(code_events: list[Code]) -> list[Code]:
    # Deduplicate keeping the LAST occurrence, then order by that position.
    last_pos: dict[Code, int] = {}
    for pos, code in enumerate(code_events):
        last_pos[code] = pos
    return [code for code, _ in sorted(last_pos.items(), key=lambda kv: kv[1])]


def encode_narrative(
    record: CohortRecord,
    grouping: GroupingTable,
    descriptions: DescriptionTable,
    combo: FeatureCombo = FeatureCombo.DIAG_MED_DEMO,
) -> NarrativeView:
    """Serialize a record as lowercase text.

    Sections: demographics sentence, diagnosis descriptions, medication
    descriptions, joined by " ; ". Within a section, grouped codes are
    deduplicated keeping the last occurrence and ordered by it; descriptions
    are comma-separated. Missing descriptions fall back to the literal code
    value and are flagged on the view. Empty sections omit their separator.
    """
    if not record.history:
        raise DataError(f"patient {record.id}: empty history cannot be narrated")

    diag_events: list[Code] = []
    med_events: list[Code] = []
    for enc in record.history:
        diag_events.extend(group_code(c, grouping) for c in enc.diagnoses)
        med_events.extend(group_code(c, grouping) for c in enc.medications)

    missing: list[str] = []

    def render(codes: list[Code]) -> str:
        parts = []
        for code in codes:
            if code.key() not in descriptions.entries:
                missing.append(code.value)
            parts.append(descriptions.describe(code))
        return ", ".join(parts)

    sections = []
    if combo.with_demographics:
        sections.append(demographics_sentence(record))
    sections.append(render(_last_occurrence_order(diag_events)))
    if combo.with_medications:
        sections.append(render(_last_occurrence_order(med_events)))
    text = SECTION_SEPARATOR.join(s for s in sections if s)
    return NarrativeView(text=text, label=record.label, patient_id=record.id, missing_descriptions=missing)


def write_narratives_jsonl(views: Sequence[NarrativeView], path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        for v in views:
            fh.write(
                json.dumps(
                    {"patient_id": v.patient_id, "label": v.label.value, "text": v.text},
                    sort_keys=True,
                )
                + "\n"
            )


def read_narratives_jsonl(path: str | Path) -> list[NarrativeView]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing narrative file: {path}")
    views = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                views.append(
                    NarrativeView(text=obj["text"], label=Label(obj["label"]), patient_id=obj["patient_id"])
                )
    return views
