"""Synthetic EHR cohort generator with controllable planted signals.

Four signal modes:

* BAG      -- labels follow the presence of a few common risk codes.
* TIMING   -- labels follow inter-visit gap patterns only; each case shares
              its exact code multiset and visit count with its matched
              non-case "family", so bag-of-codes features are uninformative
              by construction.
* SYNONYM  -- labels follow a description token shared by many individually
              rare medication codes, each kept under the frequency-filter
              threshold so one-hot encodings cannot see the signal.
* NULL     -- structurally valid cases and non-cases whose feature
              distributions are label-independent (calibration control).

Generation is single-threaded and deterministic for a fixed config+seed;
identical configs reproduce byte-identical artifacts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .ehr import (
    CancerType,
    Code,
    CodeSystem,
    Demographics,
    Encounter,
    Patient,
    write_code_set_tsv,
    write_patients_jsonl,
)
from .errors import ConfigurationError
from .terminology import (
    DescriptionTable,
    GroupingTable,
    write_descriptions_tsv,
    write_grouping_tsv,
)


class SignalMode(str, Enum):
    BAG = "BAG"
    TIMING = "TIMING"
    SYNONYM = "SYNONYM"
    NULL = "NULL"


DEFAULT_CASE_FRACTION = 1602 / 12806

DEFAULT_DEMOGRAPHIC_MIX = {
    "sex": {"female": 0.669, "male": 0.331},
    "race": {
        "white": 0.735,
        "black or african american": 0.198,
        "other": 0.046,
        "asian": 0.014,
        "unknown": 0.007,
    },
    "ethnicity": {"not hispanic or latino": 0.958, "hispanic or latino": 0.032, "unknown": 0.010},
    "smoking_status": {"never": 0.45, "former": 0.35, "current": 0.15, "unknown": 0.05},
    "cancer": {"LUNG": 0.366, "BREAST": 0.359, "COLORECTAL": 0.212, "MULTIPLE": 0.063},
}


@dataclass
class GeneratorConfig:
    n_patients: int = 4000
    case_fraction: float = DEFAULT_CASE_FRACTION
    signal_mode: SignalMode = SignalMode.BAG
    n_synonym_codes: int = 50
    max_code_patients: int = 9  # rarity cap per rare med code
    signal_coverage: float = 0.9  # fraction of cases carrying a signal code (SYNONYM)
    seed: int = 0
    n_diag_concepts: int = 500
    n_med_concepts: int = 60
    min_visits: int = 4
    max_visits: int = 7
    demographic_mix: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_DEMOGRAPHIC_MIX.items()})

    def validate(self):
        if self.n_patients < 8:
            raise ConfigurationError("n_patients must be >= 8")
        if not 0.0 < self.case_fraction < 1.0:
            raise ConfigurationError("case_fraction must be in (0, 1)")
        if self.max_code_patients < 1 or self.n_synonym_codes < 1:
            raise ConfigurationError("n_synonym_codes and max_code_patients must be >= 1")
        if not 0.0 < self.signal_coverage <= 1.0:
            raise ConfigurationError("signal_coverage must be in (0, 1]")
        if self.min_visits < 2 or self.max_visits < self.min_visits:
            raise ConfigurationError("need max_visits >= min_visits >= 2")
        if self.signal_mode == SignalMode.SYNONYM:
            carriers = math.ceil(self.signal_coverage * round(self.n_patients * self.case_fraction))
            capacity = self.n_synonym_codes * self.max_code_patients
            if capacity < carriers:
                raise ConfigurationError(
                    f"SYNONYM infeasible: {self.n_synonym_codes} codes x {self.max_code_patients} "
                    f"patients < {carriers} required carriers"
                )
        if self.signal_mode == SignalMode.TIMING:
            r = self._timing_siblings()
            realized = 1.0 / (1 + r)
            if abs(realized - self.case_fraction) > 0.01:
                raise ConfigurationError(
                    f"TIMING supports case fractions near 1/(1+k); requested {self.case_fraction:.4f}, "
                    f"closest achievable {realized:.4f}"
                )

    def _timing_siblings(self) -> int:
        return max(1, round((1 - self.case_fraction) / self.case_fraction))


# ---------------------------------------------------------------------------
# Deterministic code/description universe.
# ---------------------------------------------------------------------------

_ADJ = ["chronic", "acute", "recurrent", "mild", "severe", "benign", "diffuse", "focal",
        "primary", "secondary", "unstable", "persistent", "latent", "atypical", "nodular",
        "obstructive", "degenerative", "ischemic", "congenital", "reactive"]
_SITE = ["pulmonary", "hepatic", "renal", "gastric", "cardiac", "vascular", "dermal",
         "neural", "skeletal", "thyroid", "adrenal", "bronchial", "colonic", "esophageal",
         "pancreatic", "splenic", "ocular", "sinus", "lumbar", "cervical"]
_NOUN = ["inflammation", "lesion", "stenosis", "insufficiency", "dysplasia", "fibrosis",
         "edema", "neuropathy", "malformation", "degeneration", "hypertrophy", "occlusion",
         "ulceration", "calcification", "atrophy", "dilation", "erosion", "sclerosis",
         "spasm", "prolapse"]
_SYL1 = ["val", "nor", "lam", "tri", "oxa", "ben", "cil", "dor", "fen", "gly",
         "hal", "ket", "lin", "mal", "nif", "pro", "quin", "ril", "sol", "tam"]
_SYL2 = ["epra", "idol", "axin", "omet", "urex", "ovan", "amid", "ostat", "izem", "onat"]
_SYL3 = ["ine", "ol", "ide", "ate", "an"]

_CANCER_DESC = {
    CancerType.LUNG: "malignant neoplasm of bronchus and lung",
    CancerType.BREAST: "malignant neoplasm of breast",
    CancerType.COLORECTAL: "malignant neoplasm of colon",
}


def _condition_phrase(i: int) -> str:
    return f"{_ADJ[i % 20]} {_SITE[(i // 20) % 20]} {_NOUN[(i // 400) % 20]}"


def _drug_name(i: int) -> str:
    return _SYL1[i % 20] + _SYL2[(i // 20) % 10] + _SYL3[(i // 200) % 5]


@dataclass
class _Concept:
    group: Code
    variants: list[Code]
    description: str


@dataclass
class SynthUniverse:
    grouping: GroupingTable
    descriptions: DescriptionTable
    hf_codes: set[Code]
    cancer_codes: set[Code]
    diag_concepts: list[_Concept]
    med_concepts: list[_Concept]
    risk_diag: list[_Concept]
    risk_med: list[_Concept]
    signal_meds: list[_Concept]
    decoy_meds: list[_Concept]
    cancer_concepts: dict[CancerType, _Concept]
    hf_concept: _Concept


def _build_universe(config: GeneratorConfig) -> SynthUniverse:
    grouping: dict[tuple[str, str], Code] = {}
    descriptions: dict[tuple[str, str], str] = {}

    def add_concept(group: Code, variants: list[Code], desc: str) -> _Concept:
        for v in variants:
            grouping[v.key()] = group
        descriptions[group.key()] = desc
        return _Concept(group=group, variants=variants, description=desc)

    diag_concepts = [
        add_concept(
            Code(CodeSystem.PHEWAS, f"pg-{i:04d}"),
            [Code(CodeSystem.ICD9, f"d9-{i:04d}"), Code(CodeSystem.ICD10, f"d10-{i:04d}")],
            _condition_phrase(i),
        )
        for i in range(config.n_diag_concepts)
    ]
    med_concepts = [
        add_concept(
            Code(CodeSystem.RXCUI_INGREDIENT, f"ing-{i:04d}"),
            [Code(CodeSystem.RXNORM_CLINICAL, f"rxa-{i:04d}"), Code(CodeSystem.RXNORM_CLINICAL, f"rxb-{i:04d}")],
            f"{_drug_name(i)} oral tablet",
        )
        for i in range(config.n_med_concepts)
    ]
    # Cancer codes map 1:1 onto their groups: every cohort member carries
    # one, so splitting them across two heavy variants would let the raw
    # profile outrank the grouped profile at the ranks just below the
    # cancer groups (grouping can only guarantee rank-wise dominance when
    # merged raw codes are not individually heavy).
    cancer_concepts = {
        ct: add_concept(
            Code(CodeSystem.PHEWAS, f"pg-ca-{ct.value.lower()}"),
            [Code(CodeSystem.ICD10, f"c10-{ct.value.lower()}")],
            _CANCER_DESC[ct],
        )
        for ct in CancerType
    }
    hf_concept = add_concept(
        Code(CodeSystem.PHEWAS, "pg-hf"),
        [
            Code(CodeSystem.ICD9, "hf9-428"),
            Code(CodeSystem.ICD9, "hf9-4280"),
            Code(CodeSystem.ICD10, "hf10-i50"),
            Code(CodeSystem.ICD10, "hf10-i509"),
        ],
        "congestive heart failure unspecified",
    )
    risk_diag = [
        add_concept(
            Code(CodeSystem.PHEWAS, f"pg-risk-{j}"),
            [Code(CodeSystem.ICD10, f"riskd-{j}")],
            f"{_ADJ[j]} cardiac strain marker",
        )
        for j in range(3)
    ]
    risk_med = [
        add_concept(
            Code(CodeSystem.RXCUI_INGREDIENT, f"ring-{j}"),
            [Code(CodeSystem.RXNORM_CLINICAL, f"riskm-{j}")],
            f"{_drug_name(900 + j)} cardiac infusion",
        )
        for j in range(3)
    ]
    signal_meds = [
        add_concept(
            Code(CodeSystem.RXCUI_INGREDIENT, f"sing-{j:03d}"),
            [Code(CodeSystem.RXNORM_CLINICAL, f"sig-{j:03d}")],
            f"{_drug_name(3000 + j)} cardiotoxin solution",
        )
        for j in range(config.n_synonym_codes)
    ]
    n_decoy_carriers = config.n_patients  # upper bound; block assignment keeps each code rare
    n_decoys = math.ceil(n_decoy_carriers / config.max_code_patients)
    decoy_meds = [
        add_concept(
            Code(CodeSystem.RXCUI_INGREDIENT, f"ding-{k:04d}"),
            [Code(CodeSystem.RXNORM_CLINICAL, f"dec-{k:04d}")],
            f"{_drug_name(5000 + k)} electrolyte solution",
        )
        for k in range(n_decoys)
    ]

    hf_codes = set(hf_concept.variants)
    cancer_codes = {v for c in cancer_concepts.values() for v in c.variants}
    return SynthUniverse(
        grouping=GroupingTable(entries=grouping, provenance="synthetic fixture"),
        descriptions=DescriptionTable(entries=descriptions),
        hf_codes=hf_codes,
        cancer_codes=cancer_codes,
        diag_concepts=diag_concepts,
        med_concepts=med_concepts,
        risk_diag=risk_diag,
        risk_med=risk_med,
        signal_meds=signal_meds,
        decoy_meds=decoy_meds,
        cancer_concepts=cancer_concepts,
        hf_concept=hf_concept,
    )


# ---------------------------------------------------------------------------
# Patient realization.
# ---------------------------------------------------------------------------


@dataclass
class TruthRow:
    patient_id: str
    label: str  # CASE / NONCASE
    signal_carrier: bool


@dataclass
class SynthResult:
    patients: list[Patient]
    truth: list[TruthRow]
    universe: SynthUniverse
    config: GeneratorConfig


def _choose(rng: np.random.Generator, dist: dict[str, float]) -> str:
    keys = list(dist.keys())
    probs = np.array([dist[k] for k in keys], dtype=float)
    probs = probs / probs.sum()
    return keys[int(rng.choice(len(keys), p=probs))]


def _draw_cancer_types(rng: np.random.Generator, mix: dict[str, float]) -> frozenset[CancerType]:
    pick = _choose(rng, mix)
    if pick == "MULTIPLE":
        idx = rng.choice(3, size=2, replace=False)
        singles = [CancerType.LUNG, CancerType.BREAST, CancerType.COLORECTAL]
        return frozenset(singles[int(i)] for i in idx)
    return frozenset({CancerType(pick)})


def _draw_demographics(rng: np.random.Generator, mix: dict, index_date: int) -> Demographics:
    age = float(np.clip(rng.normal(62.0, 11.0), 25.0, 95.0))
    return Demographics(
        sex=_choose(rng, mix["sex"]),
        race=_choose(rng, mix["race"]),
        ethnicity=_choose(rng, mix["ethnicity"]),
        birth_offset=int(round(index_date - age * 365.25)),
        smoking_status=_choose(rng, mix["smoking_status"]),
        cancer_types=_draw_cancer_types(rng, mix["cancer"]),
    )


@dataclass
class _VisitProfile:
    """Label-independent content of one patient timeline (codes per visit)."""

    n_visits: int
    diag_draws: list[list[tuple[int, int]]]  # per visit: (concept index, variant index)
    med_draws: list[list[tuple[int, int]]]


def _draw_profile(rng: np.random.Generator, config: GeneratorConfig) -> _VisitProfile:
    n_visits = int(rng.integers(config.min_visits, config.max_visits + 1))
    diag_draws = []
    med_draws = []
    for _ in range(n_visits):
        kd = int(rng.integers(2, 4))
        km = int(rng.integers(1, 3))
        diag_draws.append(
            [(int(rng.integers(0, config.n_diag_concepts)), int(rng.integers(0, 2))) for _ in range(kd)]
        )
        med_draws.append(
            [(int(rng.integers(0, config.n_med_concepts)), int(rng.integers(0, 2))) for _ in range(km)]
        )
    return _VisitProfile(n_visits=n_visits, diag_draws=diag_draws, med_draws=med_draws)


def _draw_gaps(rng: np.random.Generator, n_visits: int, is_case: bool, mode: SignalMode) -> list[int]:
    """Inter-visit gaps; gaps[0] is the lead-in gap after the first visit.

    The first gap always exceeds the eligibility window so a qualifying
    early encounter exists regardless of label.
    """
    first = int(rng.integers(190, 241))
    if mode == SignalMode.TIMING:
        lo, hi = (5, 26) if is_case else (75, 116)
    else:
        lo, hi = (20, 91)
    rest = [int(rng.integers(lo, hi)) for _ in range(max(0, n_visits - 2))]
    return [first] + rest


class _PatientPlan:
    __slots__ = ("is_case", "profile", "signal_concept", "decoy_concept", "risk_flags", "shared_cancer")

    def __init__(self, is_case, profile, signal_concept, decoy_concept, risk_flags, shared_cancer=None):
        self.is_case = is_case
        self.profile = profile
        self.signal_concept = signal_concept
        self.decoy_concept = decoy_concept
        self.risk_flags = risk_flags  # per risk concept: carried or not (BAG)
        # TIMING families also share cancer types + variant picks so every
        # code's per-class frequency is exactly proportional
        self.shared_cancer = shared_cancer


def _plan_patients(config: GeneratorConfig, universe: SynthUniverse, rng: np.random.Generator) -> list[_PatientPlan]:
    mode = config.signal_mode
    plans: list[_PatientPlan] = []
    if mode == SignalMode.TIMING:
        r = config._timing_siblings()
        n_families = max(1, round(config.n_patients / (1 + r)))
        for _ in range(n_families):
            profile = _draw_profile(rng, config)
            cancer_types = _draw_cancer_types(rng, config.demographic_mix["cancer"])
            variant_picks = {
                ct: int(rng.integers(0, len(universe.cancer_concepts[ct].variants)))
                for ct in sorted(cancer_types, key=lambda c: c.value)
            }
            shared = (cancer_types, variant_picks)
            plans.append(_PatientPlan(True, profile, None, None, None, shared))
            plans.extend(_PatientPlan(False, profile, None, None, None, shared) for _ in range(r))
    else:
        n_cases = round(config.n_patients * config.case_fraction)
        labels = [True] * n_cases + [False] * (config.n_patients - n_cases)
        for is_case in labels:
            profile = _draw_profile(rng, config)
            risk_flags = None
            if mode == SignalMode.BAG:
                p = 0.7 if is_case else 0.15
                n_risk = len(universe.risk_diag) + len(universe.risk_med)
                risk_flags = [bool(rng.random() < p) for _ in range(n_risk)]
            plans.append(_PatientPlan(is_case, profile, None, None, risk_flags))

        if mode == SignalMode.SYNONYM:
            case_positions = [i for i, pl in enumerate(plans) if pl.is_case]
            n_carriers = math.ceil(config.signal_coverage * len(case_positions))
            carrier_positions = list(rng.permutation(case_positions))[:n_carriers]
            # Block assignment keeps every signal code at <= max_code_patients patients.
            for j, pos in enumerate(sorted(int(p) for p in carrier_positions)):
                plans[pos].signal_concept = universe.signal_meds[j // config.max_code_patients]
            decoy_idx = 0
            for plan in plans:
                if plan.signal_concept is None:
                    plan.decoy_concept = universe.decoy_meds[decoy_idx // config.max_code_patients]
                    decoy_idx += 1
    return plans


def _realize_patient(
    pid: str,
    plan: _PatientPlan,
    config: GeneratorConfig,
    universe: SynthUniverse,
    rng: np.random.Generator,
) -> Patient:
    profile = plan.profile
    gaps = _draw_gaps(rng, profile.n_visits, plan.is_case, config.signal_mode)
    dates = [0]
    for g in gaps:
        dates.append(dates[-1] + g)
    dates = dates[: profile.n_visits]

    # Demographics are anchored to the index date so age-at-index is
    # label-independent by construction.
    index_date = dates[-1] + int(rng.integers(5, 16)) if plan.is_case else dates[-1]
    demo = _draw_demographics(rng, config.demographic_mix, index_date)
    if plan.shared_cancer is not None:
        cancer_types, variant_picks = plan.shared_cancer
        demo = replace(demo, cancer_types=cancer_types)
    else:
        variant_picks = {
            ct: int(rng.integers(0, len(universe.cancer_concepts[ct].variants)))
            for ct in sorted(demo.cancer_types, key=lambda c: c.value)
        }

    encounters = []
    signal_visit = int(rng.integers(0, profile.n_visits))
    for v in range(profile.n_visits):
        diagnoses: list[Code] = []
        medications: list[Code] = []
        if v == 0:
            for ct in sorted(demo.cancer_types, key=lambda c: c.value):
                diagnoses.append(universe.cancer_concepts[ct].variants[variant_picks[ct]])
        seen = set()
        for ci, vi in profile.diag_draws[v]:
            code = universe.diag_concepts[ci].variants[vi]
            if code not in seen:
                seen.add(code)
                diagnoses.append(code)
        for ci, vi in profile.med_draws[v]:
            code = universe.med_concepts[ci].variants[vi]
            if code not in seen:
                seen.add(code)
                medications.append(code)
        if plan.risk_flags is not None and v == signal_visit:
            concepts = universe.risk_diag + universe.risk_med
            for flag, concept in zip(plan.risk_flags, concepts):
                if flag:
                    code = concept.variants[0]
                    if code.system == CodeSystem.RXNORM_CLINICAL:
                        medications.append(code)
                    else:
                        diagnoses.append(code)
        if plan.signal_concept is not None and v == signal_visit:
            medications.append(plan.signal_concept.variants[0])
        if plan.decoy_concept is not None and v == signal_visit:
            medications.append(plan.decoy_concept.variants[0])
        encounters.append(Encounter(date=dates[v], diagnoses=diagnoses, medications=medications))

    if plan.is_case:
        hf_code = universe.hf_concept.variants[int(rng.integers(0, len(universe.hf_concept.variants)))]
        encounters.append(Encounter(date=index_date, diagnoses=[hf_code]))
    return Patient(id=pid, demographics=demo, encounters=encounters)


def generate(config: GeneratorConfig) -> SynthResult:
    """Generate a synthetic cohort plus its ground truth and fixture tables."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    universe = _build_universe(config)
    plans = _plan_patients(config, universe, rng)

    # Shuffle ids so they carry no label information, then realize in id order
    # to keep output deterministic and sorted.
    order = rng.permutation(len(plans))
    ordered = [plans[int(i)] for i in order]
    width = max(5, len(str(len(ordered))))
    patients: list[Patient] = []
    truth: list[TruthRow] = []
    for i, plan in enumerate(ordered):
        pid = f"p{i:0{width}d}"
        patients.append(_realize_patient(pid, plan, config, universe, rng))
        truth.append(
            TruthRow(
                patient_id=pid,
                label="CASE" if plan.is_case else "NONCASE",
                signal_carrier=plan.signal_concept is not None,
            )
        )
    return SynthResult(patients=patients, truth=truth, universe=universe, config=config)


def write_artifacts(result: SynthResult, outdir: str | Path) -> dict[str, Path]:
    """Emit patients.jsonl, ground_truth.csv, and the fixture terminology tables."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "patients": outdir / "patients.jsonl",
        "ground_truth": outdir / "ground_truth.csv",
        "grouping": outdir / "grouping.tsv",
        "descriptions": outdir / "descriptions.tsv",
        "hf_codes": outdir / "hf_codes.tsv",
        "cancer_codes": outdir / "cancer_codes.tsv",
    }
    write_patients_jsonl(result.patients, paths["patients"])
    with open(paths["ground_truth"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "label", "signal_carrier"])
        for row in result.truth:
            writer.writerow([row.patient_id, row.label, int(row.signal_carrier)])
    write_grouping_tsv(result.universe.grouping, paths["grouping"])
    write_descriptions_tsv(result.universe.descriptions, paths["descriptions"])
    write_code_set_tsv(result.universe.hf_codes, paths["hf_codes"])
    write_code_set_tsv(result.universe.cancer_codes, paths["cancer_codes"])
    return paths
