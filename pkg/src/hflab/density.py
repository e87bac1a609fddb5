"""Feature-density profiles: distinct patients per feature, ranked.

Compares how many patients share each feature under raw diagnosis codes,
grouped diagnosis codes, and subword pieces of the narrative view. Subword
density is counted over the untruncated narrative by default (density is a
corpus property, not a model-input property).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .ehr import CohortRecord
from .encoders import NarrativeView, encode_narrative
from .errors import ConfigurationError
from .subword import SubwordVocab, _match_word, pretokenize
from .terminology import DescriptionTable, GroupingTable, group_code

DEFAULT_TOP_K = 400


class DensityExtractor(str, Enum):
    RAW_ICD = "RAW_ICD"
    PHEWAS = "PHEWAS"
    SUBWORD = "SUBWORD"


@dataclass
class DensityProfile:
    entries: list[tuple[str, int]]  # (feature, unique_patients) count-descending
    encoding_name: str

    def counts(self) -> list[int]:
        return [c for _, c in self.entries]


def _narrative_pieces(text: str, vocab: SubwordVocab) -> set[str]:
    pieces: set[str] = set()
    for word in pretokenize(text):
        matched = _match_word(word, vocab)
        if matched is None:
            pieces.add("[UNK]")
        else:
            pieces.update(matched)
    return pieces


def feature_density(
    cohort: Sequence[CohortRecord],
    extractor: DensityExtractor,
    top_k: int = DEFAULT_TOP_K,
    grouping: GroupingTable | None = None,
    descriptions: DescriptionTable | None = None,
    vocab: SubwordVocab | None = None,
    narratives: Sequence[NarrativeView] | None = None,
    truncate: bool = False,
) -> DensityProfile:
    """Distinct-patient count per feature, sorted descending, top_k entries.

    Ties break lexicographically. SUBWORD needs a built vocabulary plus
    either precomputed narratives or the tables to build them.
    """
    counts: dict[str, int] = {}
    if extractor == DensityExtractor.SUBWORD:
        if vocab is None:
            raise ConfigurationError("SUBWORD density needs a built subword vocabulary")
        if narratives is None:
            if grouping is None or descriptions is None:
                raise ConfigurationError("SUBWORD density needs narratives or the tables to build them")
            narratives = [encode_narrative(r, grouping, descriptions) for r in cohort]
        for view in narratives:
            text = view.text
            if truncate:
                # model-input variant: count only pieces inside the window
                matched_all = []
                for word in pretokenize(text):
                    m = _match_word(word, vocab)
                    matched_all.extend(m if m is not None else ["[UNK]"])
                features = set(matched_all[: vocab.max_len - 1])  # [CLS] occupies one slot
            else:
                features = _narrative_pieces(text, vocab)
            for f in features:
                counts[f] = counts.get(f, 0) + 1
    else:
        if grouping is None and extractor == DensityExtractor.PHEWAS:
            raise ConfigurationError("PHEWAS density needs a grouping table")
        for record in cohort:
            features: set[str] = set()
            for enc in record.history:
                for code in enc.diagnoses:
                    if extractor == DensityExtractor.RAW_ICD:
                        features.add(code.value)
                    else:
                        features.add(group_code(code, grouping).value)
            for f in features:
                counts[f] = counts.get(f, 0) + 1

    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    return DensityProfile(entries=ranked, encoding_name=extractor.value)


def write_density_csv(profile: DensityProfile, path: str | Path):
    """Plot-ready export: rank, feature, unique_patients, encoding."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "feature", "unique_patients", "encoding"])
        for rank, (feature, count) in enumerate(profile.entries, 1):
            writer.writerow([rank, feature, count, profile.encoding_name])
