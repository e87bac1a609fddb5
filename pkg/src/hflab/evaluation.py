"""Splits, cross-validated grid search, feature-combination study, subgroups.

The 6:2:2 split is stratified by label with largest-remainder rounding per
class (remainder ties resolved in train -> validation -> test order), which
preserves the cohort's case ratio in every subset.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ehr import CancerType, CohortRecord, Label
from .errors import ConfigurationError
from .metrics import MetricReport, compute_metrics

log = logging.getLogger(__name__)

SPLIT_FRACTIONS = (0.6, 0.2, 0.2)


class Subset(str, Enum):
    TRAIN = "TRAIN"
    VALIDATION = "VALIDATION"
    TEST = "TEST"


@dataclass
class SplitAssignment:
    assignment: dict[str, Subset]
    seed: int

    def ids(self, subset: Subset) -> list[str]:
        return [pid for pid, s in self.assignment.items() if s == subset]

    def select(self, records: Sequence[CohortRecord], subset: Subset) -> list[CohortRecord]:
        return [r for r in records if self.assignment[r.id] == subset]

    def sizes(self) -> dict[Subset, int]:
        out = {s: 0 for s in Subset}
        for s in self.assignment.values():
            out[s] += 1
        return out


def _largest_remainder(n: int, fractions: Sequence[float], running: Sequence[float]) -> list[int]:
    """Integer allocation of n by fractions.

    Remainder ties go to the bucket currently furthest below its global
    proportional share (``running`` holds totals already allocated to each
    bucket by earlier classes), then to the earlier bucket. The deficit-aware
    tie-break keeps the grand totals on the 6:2:2 grid across classes.
    """
    exact = [n * f for f in fractions]
    counts = [int(np.floor(e)) for e in exact]
    leftover = n - sum(counts)
    grand = sum(running) + n
    surplus = [running[i] + counts[i] - fractions[i] * grand for i in range(len(fractions))]
    order = sorted(
        range(len(fractions)),
        key=lambda i: (-(exact[i] - counts[i]), surplus[i], i),
    )
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def split_622(cohort: Sequence[CohortRecord], seed: int) -> SplitAssignment:
    """Deterministic stratified 6:2:2 split over patient ids."""
    by_label: dict[Label, list[str]] = {Label.CASE: [], Label.NONCASE: []}
    for r in cohort:
        by_label[r.label].append(r.id)
    for label, ids in by_label.items():
        if len(ids) < 3:
            raise ConfigurationError(f"cannot stratify: class {label.value} has {len(ids)} members")
    rng = np.random.default_rng(seed)
    assignment: dict[str, Subset] = {}
    running = [0.0, 0.0, 0.0]
    for label in (Label.CASE, Label.NONCASE):
        ids = sorted(by_label[label])
        order = rng.permutation(len(ids))
        shuffled = [ids[int(i)] for i in order]
        n_train, n_val, n_test = _largest_remainder(len(ids), SPLIT_FRACTIONS, running)
        running = [running[0] + n_train, running[1] + n_val, running[2] + n_test]
        for pid in shuffled[:n_train]:
            assignment[pid] = Subset.TRAIN
        for pid in shuffled[n_train : n_train + n_val]:
            assignment[pid] = Subset.VALIDATION
        for pid in shuffled[n_train + n_val :]:
            assignment[pid] = Subset.TEST
    return SplitAssignment(assignment=assignment, seed=seed)


def write_split_csv(split: SplitAssignment, path: str | Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "subset"])
        for pid in sorted(split.assignment):
            writer.writerow([pid, split.assignment[pid].value])


def read_split_csv(path: str | Path) -> SplitAssignment:
    assignment = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            assignment[row["patient_id"]] = Subset(row["subset"])
    return SplitAssignment(assignment=assignment, seed=-1)


# ---------------------------------------------------------------------------
# Grid search with stratified k-fold cross validation (shallow families).
# ---------------------------------------------------------------------------


@dataclass
class CvRow:
    config: dict
    fold_f1: list[float]
    mean_f1: float


@dataclass
class GridSearchResult:
    best_config: dict
    table: list[CvRow]
    fitted_model: object


def stratified_folds(labels: np.ndarray, n_folds: int, seed: int) -> list[np.ndarray]:
    """Index partition with per-class round-robin after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        for i, j in enumerate(idx):
            folds[i % n_folds].append(int(j))
    return [np.array(sorted(f), dtype=int) for f in folds]


def grid_search_cv(
    fit_fn: Callable[[dict, np.ndarray, np.ndarray], object],
    score_fn: Callable[[object, np.ndarray], np.ndarray],
    grid: Sequence[dict],
    X: np.ndarray,
    y: np.ndarray,
    n_folds: int = 5,
    seed: int = 0,
    threshold: float = 0.5,
) -> GridSearchResult:
    """Mean-fold-F1 model selection over a config grid; ties keep the
    earliest grid entry; the winner is refit on all merged data.

    fit_fn(config, X, y) -> model; score_fn(model, X) -> probabilities.
    """
    if not grid:
        raise ConfigurationError("grid must be non-empty")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    folds = stratified_folds(y, n_folds, seed)
    table: list[CvRow] = []
    for config in grid:
        fold_scores = []
        for i, held in enumerate(folds):
            train_idx = np.setdiff1d(np.arange(len(y)), held)
            if len(np.unique(y[held])) < 2 or len(np.unique(y[train_idx])) < 2:
                log.warning("grid_search_cv: fold %d skipped (single class)", i)
                continue
            model = fit_fn(config, X[train_idx], y[train_idx])
            proba = score_fn(model, X[held])
            fold_scores.append(compute_metrics(proba, y[held], threshold).f1)
        mean_f1 = float(np.mean(fold_scores)) if fold_scores else 0.0
        table.append(CvRow(config=config, fold_f1=fold_scores, mean_f1=mean_f1))
    best_row = max(table, key=lambda r: r.mean_f1)  # max keeps the earliest on ties
    fitted = fit_fn(best_row.config, X, y)
    return GridSearchResult(best_config=best_row.config, table=table, fitted_model=fitted)


# ---------------------------------------------------------------------------
# Study tables.
# ---------------------------------------------------------------------------


@dataclass
class StudyRow:
    model: str
    features: str
    encoding: str
    report: MetricReport


def feature_combination_study(
    runner: Callable[[str, str], MetricReport],
    models_and_encodings: Sequence[tuple[str, str]],
    combos: Sequence[str] = ("DIAG", "DIAG_DEMO", "DIAG_MED_DEMO"),
) -> list[StudyRow]:
    """One row per (model, combo); the runner trains and evaluates a model
    family restricted to a feature combination and returns test metrics."""
    rows = []
    for model_name, encoding in models_and_encodings:
        for combo in combos:
            rows.append(
                StudyRow(model=model_name, features=combo, encoding=encoding, report=runner(model_name, combo))
            )
    return rows


MULTI_CANCER_GROUP = "more than one cancer"


def subgroup_partition(records: Sequence[CohortRecord]) -> dict[str, list[CohortRecord]]:
    groups: dict[str, list[CohortRecord]] = {
        "lung cancer": [],
        "breast cancer": [],
        "colorectal cancer": [],
        MULTI_CANCER_GROUP: [],
    }
    names = {
        CancerType.LUNG: "lung cancer",
        CancerType.BREAST: "breast cancer",
        CancerType.COLORECTAL: "colorectal cancer",
    }
    for r in records:
        types = r.patient.demographics.cancer_types
        if len(types) > 1:
            groups[MULTI_CANCER_GROUP].append(r)
        else:
            groups[names[next(iter(types))]].append(r)
    return groups


@dataclass
class SubgroupRow:
    group: str
    n: int
    report: MetricReport | None  # None for empty groups


def subgroup_eval(
    records: Sequence[CohortRecord],
    scores_by_id: dict[str, float],
    threshold: float = 0.5,
) -> list[SubgroupRow]:
    """Per-cancer-subgroup metrics; patients with multiple cancer types form
    their own group. Metrics equal compute_metrics on the filtered subset."""
    rows = []
    for group, members in subgroup_partition(records).items():
        if not members:
            rows.append(SubgroupRow(group=group, n=0, report=None))
            continue
        scores = np.array([scores_by_id[r.id] for r in members])
        labels = np.array([1 if r.label == Label.CASE else 0 for r in members])
        rows.append(SubgroupRow(group=group, n=len(members), report=compute_metrics(scores, labels, threshold)))
    return rows


# ---------------------------------------------------------------------------
# CSV / aligned-text table emission.
# ---------------------------------------------------------------------------

_METRIC_COLUMNS = ("f1", "precision", "recall", "auc", "specificity", "accuracy")


def _fmt(value) -> str:
    return "" if value is None else f"{value:.6f}"


def write_metrics_csv(rows: Sequence[dict], path: str | Path):
    """Rows are dicts with string context columns plus a 'report' MetricReport."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        context_cols = [k for k in rows[0] if k != "report"] if rows else []
        writer = csv.writer(fh)
        writer.writerow(context_cols + list(_METRIC_COLUMNS) + ["n"])
        for row in rows:
            report: MetricReport | None = row["report"]
            cells = [str(row[k]) for k in context_cols]
            if report is None:
                cells += [""] * len(_METRIC_COLUMNS) + ["0"]
            else:
                cells += [_fmt(getattr(report, m)) for m in _METRIC_COLUMNS]
                cells.append(str(report.n))
            writer.writerow(cells)


def render_text_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n"
