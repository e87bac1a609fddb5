"""Disk-staged experiment pipeline behind the CLI.

Every stage reads documented artifacts, writes documented artifacts, and
appends an entry (command, resolved config, seed, input/output hashes) to
the run manifest, which is sufficient to re-execute the stage and reproduce
its outputs byte-for-byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import density as density_mod
from .ehr import (
    CohortRecord,
    Label,
    label_cohort,
    read_code_set_tsv,
    read_cohort_jsonl,
    read_patients_jsonl,
    write_cohort_jsonl,
)
from .encoders import (
    FeatureCombo,
    NarrativeView,
    OneHotVocab,
    SequenceSpec,
    SequenceView,
    build_all_sequences,
    bucket_minibatches,
    encode_narrative,
    encode_onehot,
    onehot_matrix,
    read_narratives_jsonl,
    write_narratives_jsonl,
    write_onehot_csv,
)
from .errors import ConfigurationError, DataError
from .evaluation import (
    GridSearchResult,
    SplitAssignment,
    StudyRow,
    Subset,
    feature_combination_study,
    grid_search_cv,
    read_split_csv,
    render_text_table,
    split_622,
    subgroup_eval,
    write_metrics_csv,
    write_split_csv,
)
from .explain import lime_explain, write_explanation
from .metrics import MetricReport, compute_metrics
from .models import (
    LinearModel,
    LossKind,
    StumpEnsemble,
    TlstmModel,
    TransformerModel,
    TransformerParams,
    train_boosted_stumps,
)
from .models.common import sigmoid
from .models.stumps import Stump
from .models.training import (
    LinearTask,
    Optimizer,
    SequenceTask,
    TokenExample,
    TokenTask,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    write_training_log_csv,
)
from .subword import build_vocab, load_vocab, save_vocab, tokenize
from .synth import GeneratorConfig, SignalMode, generate, write_artifacts
from .terminology import (
    frequency_filter,
    read_descriptions_tsv,
    read_grouping_tsv,
)

MODEL_FAMILIES = ("logistic", "hinge", "stumps", "tlstm", "transformer")
SHALLOW_FAMILIES = ("logistic", "hinge", "stumps")

DEFAULT_CONFIG: dict = {
    "seed": 7,
    "synth": {
        "n_patients": 2000,
        "case_fraction": 0.125,
        "signal_mode": "BAG",
        "n_synonym_codes": 50,
        "max_code_patients": 9,
        "signal_coverage": 0.9,
        "n_diag_concepts": 150,
        "n_med_concepts": 40,
        "min_visits": 4,
        "max_visits": 7,
    },
    "label": {"gap_days": 183},
    "filter": {"min_patients": 10},
    "encode": {"combo": "DIAG_MED_DEMO"},
    "vocab": {"target_size": 1200, "max_len": 512},
    "train": {
        "logistic": {
            "grid": [{"l2": 0.0}, {"l2": 1e-4}, {"l2": 1e-2}],
            "learning_rate": 0.05,
            "optimizer": "ADAM",
            "max_epochs": 20,
            "batch_size": 64,
        },
        "hinge": {
            "grid": [{"l2": 1e-4}, {"l2": 1e-2}],
            "learning_rate": 0.05,
            "optimizer": "ADAM",
            "max_epochs": 20,
            "batch_size": 64,
        },
        "stumps": {"grid": [{"n_rounds": 50, "learning_rate": 0.3}, {"n_rounds": 100, "learning_rate": 0.1}]},
        "tlstm": {
            "hidden_dim": 128,
            "fc_dim": 64,
            "learning_rate": 1e-3,
            "optimizer": "ADAM",
            "max_epochs": 20,
            "patience": 3,
            "batch_size": 32,
            "class_weight": None,
        },
        "transformer": {
            "d_model": 128,
            "n_layers": 2,
            "n_heads": 4,
            "learning_rate": 1e-4,
            "optimizer": "ADAM",
            "max_epochs": 20,
            "patience": 3,
            "batch_size": 16,
            "class_weight": None,
        },
    },
    "explain": {"n_samples": 200},
}


def merge_config(overrides: dict | None) -> dict:
    def merge(base, over):
        out = dict(base)
        for k, v in (over or {}).items():
            out[k] = merge(base.get(k, {}), v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
        return out

    return merge(DEFAULT_CONFIG, overrides or {})


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return merge_config(None)
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Missing config file: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            return merge_config(json.load(fh))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# Manifest.
# ---------------------------------------------------------------------------


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """Append-only record of pipeline stages under one output directory."""

    def __init__(self, outdir: Path):
        self.path = Path(outdir) / "manifest.json"
        self.stages: list[dict] = []
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                self.stages = json.load(fh)["stages"]

    def record(
        self,
        command: str,
        args: dict,
        config: dict,
        seed: int,
        inputs: Sequence[Path],
        outputs: Sequence[Path],
    ):
        self.stages.append(
            {
                "command": command,
                "args": args,
                "config": config,
                "seed": seed,
                "inputs": {Path(p).name: file_sha256(Path(p)) for p in inputs},
                "outputs": {Path(p).name: file_sha256(Path(p)) for p in outputs},
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
            }
        )
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump({"stages": self.stages}, fh, indent=2, sort_keys=True)


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DataError(f"Missing required artifact {path} (run `{hint}` first)")
    return path


# ---------------------------------------------------------------------------
# Artifact paths.
# ---------------------------------------------------------------------------


class Workspace:
    def __init__(self, outdir: str | Path):
        self.dir = Path(outdir)

    def path(self, name: str) -> Path:
        return self.dir / name

    # synth
    @property
    def patients(self):
        return self.dir / "patients.jsonl"

    @property
    def grouping(self):
        return self.dir / "grouping.tsv"

    @property
    def descriptions(self):
        return self.dir / "descriptions.tsv"

    @property
    def hf_codes(self):
        return self.dir / "hf_codes.tsv"

    @property
    def cancer_codes(self):
        return self.dir / "cancer_codes.tsv"

    # label
    @property
    def cohort(self):
        return self.dir / "cohort.jsonl"

    @property
    def exclusions(self):
        return self.dir / "exclusions.csv"

    # encode
    @property
    def split(self):
        return self.dir / "split.csv"

    @property
    def onehot(self):
        return self.dir / "onehot.csv"

    @property
    def sequences(self):
        return self.dir / "sequences.jsonl"

    @property
    def narratives(self):
        return self.dir / "narratives.jsonl"

    @property
    def encoder_meta(self):
        return self.dir / "encoders.json"

    # vocab
    @property
    def vocab(self):
        return self.dir / "vocab.txt"

    def checkpoint(self, model: str) -> Path:
        return self.dir / f"model_{model}.json"

    def training_log(self, model: str) -> Path:
        return self.dir / f"training_log_{model}.csv"

    def metrics(self, model: str) -> Path:
        return self.dir / f"metrics_{model}.csv"

    def subgroups(self, model: str) -> Path:
        return self.dir / f"subgroup_{model}.csv"


# ---------------------------------------------------------------------------
# Stages.
# ---------------------------------------------------------------------------


def run_synth(outdir: str | Path, config: dict, seed: int | None = None) -> dict:
    ws = Workspace(outdir)
    ws.dir.mkdir(parents=True, exist_ok=True)
    scfg = dict(config["synth"])
    if seed is not None:
        scfg["seed"] = seed
    elif "seed" not in scfg:
        scfg["seed"] = config["seed"]
    gen_config = GeneratorConfig(
        n_patients=int(scfg["n_patients"]),
        case_fraction=float(scfg["case_fraction"]),
        signal_mode=SignalMode(scfg["signal_mode"]),
        n_synonym_codes=int(scfg["n_synonym_codes"]),
        max_code_patients=int(scfg["max_code_patients"]),
        signal_coverage=float(scfg.get("signal_coverage", 0.9)),
        seed=int(scfg["seed"]),
        n_diag_concepts=int(scfg["n_diag_concepts"]),
        n_med_concepts=int(scfg["n_med_concepts"]),
        min_visits=int(scfg["min_visits"]),
        max_visits=int(scfg["max_visits"]),
    )
    result = generate(gen_config)
    paths = write_artifacts(result, ws.dir)
    RunManifest(ws.dir).record("synth", {"seed": gen_config.seed}, config, gen_config.seed, [], list(paths.values()))
    return {"n_patients": len(result.patients), "paths": paths}


def run_label(outdir: str | Path, config: dict) -> dict:
    ws = Workspace(outdir)
    patients = read_patients_jsonl(_need(ws.patients, "hflab synth"))
    hf = read_code_set_tsv(_need(ws.hf_codes, "hflab synth"))
    cancer = read_code_set_tsv(_need(ws.cancer_codes, "hflab synth"))
    records, exclusions = label_cohort(patients, hf, cancer, gap_days=int(config["label"]["gap_days"]))
    write_cohort_jsonl(records, ws.cohort)
    with open(ws.exclusions, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "reason"])
        for e in exclusions:
            writer.writerow([e.patient_id, e.reason.value])
    RunManifest(ws.dir).record(
        "label",
        {},
        config,
        config["seed"],
        [ws.patients, ws.hf_codes, ws.cancer_codes],
        [ws.cohort, ws.exclusions],
    )
    n_case = sum(1 for r in records if r.label == Label.CASE)
    return {"n_records": len(records), "n_cases": n_case, "n_excluded": len(exclusions)}


@dataclass
class EncodedViews:
    """In-memory bundle shared by encode/train/evaluate stages."""

    records: list[CohortRecord]
    split: SplitAssignment
    onehot_vocab: OneHotVocab
    seq_spec: SequenceSpec
    sequences: dict[str, SequenceView]
    narratives: dict[str, NarrativeView]
    seq_dropped: list[str]


def build_views(
    records: Sequence[CohortRecord],
    split: SplitAssignment,
    grouping,
    descriptions,
    min_patients: int,
    combo: FeatureCombo,
) -> EncodedViews:
    train_records = split.select(records, Subset.TRAIN)
    vocab = frequency_filter(train_records, grouping, min_patients=min_patients)
    onehot_vocab = OneHotVocab.fit(train_records, vocab, grouping, combo)
    seq_spec = SequenceSpec(vocab=vocab, grouping=grouping, demo=onehot_vocab.demo, combo=combo)
    seq_views, dropped = build_all_sequences(records, seq_spec)
    narratives = {r.id: encode_narrative(r, grouping, descriptions, combo) for r in records}
    return EncodedViews(
        records=list(records),
        split=split,
        onehot_vocab=onehot_vocab,
        seq_spec=seq_spec,
        sequences={v.patient_id: v for v in seq_views},
        narratives=narratives,
        seq_dropped=dropped,
    )


def run_encode(outdir: str | Path, config: dict, seed: int | None = None) -> dict:
    ws = Workspace(outdir)
    records = read_cohort_jsonl(_need(ws.cohort, "hflab label"))
    grouping = read_grouping_tsv(_need(ws.grouping, "hflab synth"))
    descriptions = read_descriptions_tsv(_need(ws.descriptions, "hflab synth"))
    split_seed = int(seed if seed is not None else config["seed"])
    split = split_622(records, split_seed)
    combo = FeatureCombo(config["encode"]["combo"])
    views = build_views(records, split, grouping, descriptions, int(config["filter"]["min_patients"]), combo)

    write_split_csv(split, ws.split)
    onehot_views = [encode_onehot(r, views.onehot_vocab) for r in records]
    write_onehot_csv(onehot_views, views.onehot_vocab, ws.onehot)
    with open(ws.sequences, "w", encoding="utf-8") as fh:
        for r in records:
            v = views.sequences.get(r.id)
            if v is None:
                continue
            steps = [sorted(int(i) for i in np.flatnonzero(row)) for row in v.steps]
            fh.write(
                json.dumps(
                    {
                        "patient_id": v.patient_id,
                        "label": v.label.value,
                        "dim": int(v.steps.shape[1]),
                        "elapsed": [float(e) for e in v.elapsed],
                        "steps": steps,
                        "values": [
                            [float(v.steps[t, i]) for i in idx] for t, idx in enumerate(steps)
                        ],
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    write_narratives_jsonl([views.narratives[r.id] for r in records], ws.narratives)
    with open(ws.encoder_meta, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "combo": combo.value,
                "min_patients": views.onehot_vocab.vocab.min_patients,
                "onehot_dim": views.onehot_vocab.dim,
                "sequence_dim": views.seq_spec.input_dim,
                "diagnosis_vocab": [c.value for c in views.onehot_vocab.vocab.diagnosis],
                "medication_vocab": [c.value for c in views.onehot_vocab.vocab.medication],
                "demographics": views.onehot_vocab.demo.to_dict(),
                "sequence_dropped": views.seq_dropped,
                "split_seed": split_seed,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
    RunManifest(ws.dir).record(
        "encode",
        {"seed": split_seed},
        config,
        split_seed,
        [ws.cohort, ws.grouping, ws.descriptions],
        [ws.split, ws.onehot, ws.sequences, ws.narratives, ws.encoder_meta],
    )
    return {
        "onehot_dim": views.onehot_vocab.dim,
        "sequence_dim": views.seq_spec.input_dim,
        "n_sequences": len(views.sequences),
        "split_sizes": {k.value: v for k, v in split.sizes().items()},
    }


def run_vocab(outdir: str | Path, config: dict) -> dict:
    ws = Workspace(outdir)
    narratives = read_narratives_jsonl(_need(ws.narratives, "hflab encode"))
    split = read_split_csv(_need(ws.split, "hflab encode"))
    train_ids = set(split.ids(Subset.TRAIN))
    corpus = [v.text for v in narratives if v.patient_id in train_ids]
    vocab = build_vocab(corpus, int(config["vocab"]["target_size"]), int(config["vocab"]["max_len"]))
    save_vocab(vocab, ws.vocab)
    RunManifest(ws.dir).record("vocab", {}, config, config["seed"], [ws.narratives, ws.split], [ws.vocab])
    return {"vocab_size": len(vocab)}


def run_density(outdir: str | Path, config: dict, encoding: str, top_k: int = 400) -> dict:
    ws = Workspace(outdir)
    extractor = density_mod.DensityExtractor(encoding.upper())
    records = read_cohort_jsonl(_need(ws.cohort, "hflab label"))
    grouping = read_grouping_tsv(_need(ws.grouping, "hflab synth"))
    kwargs = {"grouping": grouping}
    inputs = [ws.cohort, ws.grouping]
    if extractor == density_mod.DensityExtractor.SUBWORD:
        kwargs["vocab"] = load_vocab(_need(ws.vocab, "hflab vocab"))
        kwargs["narratives"] = read_narratives_jsonl(_need(ws.narratives, "hflab encode"))
        inputs += [ws.vocab, ws.narratives]
    profile = density_mod.feature_density(records, extractor, top_k=top_k, **kwargs)
    out = ws.path(f"density_{encoding.lower()}.csv")
    density_mod.write_density_csv(profile, out)
    RunManifest(ws.dir).record("density", {"encoding": encoding, "top_k": top_k}, config, config["seed"], inputs, [out])
    return {"n_features": len(profile.entries), "path": out}


# -- encoded-artifact readers ------------------------------------------------


def _read_onehot_csv(path: Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    ids, labels, rows = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            ids.append(row[0])
            labels.append(1.0 if row[1] == "CASE" else 0.0)
            rows.append([float(x) for x in row[2:]])
    return np.asarray(rows), np.asarray(labels), ids


def _read_sequences_jsonl(path: Path) -> list[SequenceView]:
    views = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            T = len(obj["elapsed"])
            steps = np.zeros((T, obj["dim"]))
            for t, (idx, vals) in enumerate(zip(obj["steps"], obj["values"])):
                steps[t, idx] = vals
            views.append(
                SequenceView(
                    steps=steps,
                    elapsed=np.asarray(obj["elapsed"], dtype=float),
                    label=Label(obj["label"]),
                    patient_id=obj["patient_id"],
                )
            )
    return views


def _subset_mask(ids: Sequence[str], split: SplitAssignment, subset: Subset) -> np.ndarray:
    return np.array([split.assignment[pid] == subset for pid in ids])


def _class_weight(value, y: np.ndarray):
    if value in (None, "none", ""):
        return None
    if value == "auto":
        pos = max(float(np.sum(y)), 1.0)
        return float((len(y) - pos) / pos)
    return float(value)


def _train_config(tcfg: dict, y_train: np.ndarray, seed: int) -> TrainConfig:
    return TrainConfig(
        optimizer=Optimizer(tcfg.get("optimizer", "ADAM")),
        learning_rate=float(tcfg.get("learning_rate", 1e-4)),
        max_epochs=int(tcfg.get("max_epochs", 20)),
        patience=int(tcfg.get("patience", 3)),
        batch_size=int(tcfg.get("batch_size", 32)),
        seed=seed,
        threshold=float(tcfg.get("threshold", 0.5)),
        class_weight=_class_weight(tcfg.get("class_weight"), y_train),
    )


def fit_linear_cv(
    X: np.ndarray, y: np.ndarray, tcfg: dict, loss: LossKind, seed: int
) -> tuple[LinearModel, GridSearchResult]:
    """Grid search + 5-fold CV on the merged train+validation data, then a
    refit on all of it (the shallow-family selection protocol)."""
    grid = tcfg.get("grid") or [{"l2": 0.0}]

    def fit_fn(cfg_entry: dict, Xf: np.ndarray, yf: np.ndarray) -> LinearModel:
        model = LinearModel(dim=Xf.shape[1], loss=loss, l2=float(cfg_entry.get("l2", 0.0)))
        task = LinearTask(model, Xf, yf, Xf, yf)
        config = _train_config({**tcfg, "patience": 10**9}, yf, seed)
        train(task, config)
        return model

    def score_fn(model: LinearModel, Xs: np.ndarray) -> np.ndarray:
        return sigmoid(model.scores(Xs))

    result = grid_search_cv(fit_fn, score_fn, grid, X, y, n_folds=5, seed=seed)
    return result.fitted_model, result


def fit_stumps_cv(X: np.ndarray, y: np.ndarray, tcfg: dict, seed: int) -> tuple[StumpEnsemble, GridSearchResult]:
    grid = tcfg.get("grid") or [{"n_rounds": 50, "learning_rate": 0.3}]

    def fit_fn(cfg_entry: dict, Xf, yf) -> StumpEnsemble:
        return train_boosted_stumps(
            Xf,
            yf,
            n_rounds=int(cfg_entry.get("n_rounds", 50)),
            learning_rate=float(cfg_entry.get("learning_rate", 0.3)),
            reg_lambda=float(cfg_entry.get("reg_lambda", 1.0)),
        )

    def score_fn(model: StumpEnsemble, Xs) -> np.ndarray:
        return model.predict_proba(Xs)

    result = grid_search_cv(fit_fn, score_fn, grid, X, y, n_folds=5, seed=seed)
    return result.fitted_model, result


def _narratives_to_examples(
    narratives: Sequence[NarrativeView], vocab, ids: set[str]
) -> list[TokenExample]:
    return [
        TokenExample(
            token_ids=tokenize(v.text, vocab),
            label=1.0 if v.label == Label.CASE else 0.0,
            patient_id=v.patient_id,
        )
        for v in narratives
        if v.patient_id in ids
    ]


def run_train(outdir: str | Path, config: dict, model_name: str, seed: int | None = None) -> dict:
    ws = Workspace(outdir)
    if model_name not in MODEL_FAMILIES:
        raise ConfigurationError(f"unknown model {model_name!r}; choose from {MODEL_FAMILIES}")
    split = read_split_csv(_need(ws.split, "hflab encode"))
    tcfg = dict(config["train"].get(model_name, {}))
    run_seed = int(seed if seed is not None else config["seed"])
    inputs: list[Path]
    meta: dict = {"model": model_name, "seed": run_seed}

    if model_name in SHALLOW_FAMILIES:
        X, y, ids = _read_onehot_csv(_need(ws.onehot, "hflab encode"))
        inputs = [ws.onehot, ws.split]
        merged = _subset_mask(ids, split, Subset.TRAIN) | _subset_mask(ids, split, Subset.VALIDATION)
        Xm, ym = X[merged], y[merged]
        if model_name == "stumps":
            model, cv = fit_stumps_cv(Xm, ym, tcfg, run_seed)
            params = {}
            meta.update(
                {
                    "kind": "stumps",
                    "base_score": model.base_score,
                    "learning_rate": model.learning_rate,
                    "n_rounds": model.n_rounds,
                    "stumps": [[s.feature, s.threshold, s.left_value, s.right_value] for s in model.stumps],
                    "best_config": cv.best_config,
                }
            )
        else:
            loss = LossKind.LOGISTIC if model_name == "logistic" else LossKind.HINGE
            model, cv = fit_linear_cv(Xm, ym, tcfg, loss, run_seed)
            params = {"w": model.params["w"], "b": model.params["b"]}
            meta.update({"kind": "linear", "loss": loss.value, "dim": model.dim, "best_config": cv.best_config})
        cv_path = ws.path(f"cv_table_{model_name}.csv")
        with open(cv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["config", "mean_f1", "fold_f1"])
            for row in cv.table:
                writer.writerow(
                    [json.dumps(row.config, sort_keys=True), f"{row.mean_f1:.6f}", ";".join(f"{f:.6f}" for f in row.fold_f1)]
                )
        outputs = [ws.checkpoint(model_name), cv_path]
    elif model_name == "tlstm":
        seqs = _read_sequences_jsonl(_need(ws.sequences, "hflab encode"))
        inputs = [ws.sequences, ws.split]
        train_seqs = [s for s in seqs if split.assignment[s.patient_id] == Subset.TRAIN]
        val_seqs = [s for s in seqs if split.assignment[s.patient_id] == Subset.VALIDATION]
        dim = seqs[0].steps.shape[1] if seqs else 0
        y_train = np.array([1.0 if s.label == Label.CASE else 0.0 for s in train_seqs])
        model = TlstmModel(
            input_dim=dim,
            hidden_dim=int(tcfg.get("hidden_dim", 128)),
            fc_dim=int(tcfg.get("fc_dim", 64)),
            seed=run_seed,
        )
        task = SequenceTask(model, train_seqs, val_seqs)
        result = train(task, _train_config(tcfg, y_train, run_seed))
        write_training_log_csv(result.log, ws.training_log(model_name))
        params = model.params
        meta.update(
            {
                "kind": "tlstm",
                "input_dim": dim,
                "hidden_dim": model.hidden_dim,
                "fc_dim": model.fc_dim,
                "best_epoch": result.best_epoch,
                "stopped_epoch": result.stopped_epoch,
            }
        )
        outputs = [ws.checkpoint(model_name), ws.training_log(model_name)]
    else:  # transformer
        narratives = read_narratives_jsonl(_need(ws.narratives, "hflab encode"))
        vocab = load_vocab(_need(ws.vocab, "hflab vocab"))
        inputs = [ws.narratives, ws.vocab, ws.split]
        train_ex = _narratives_to_examples(narratives, vocab, set(split.ids(Subset.TRAIN)))
        val_ex = _narratives_to_examples(narratives, vocab, set(split.ids(Subset.VALIDATION)))
        y_train = np.array([e.label for e in train_ex])
        spec = TransformerParams(
            vocab_size=len(vocab),
            max_len=vocab.max_len,
            d_model=int(tcfg.get("d_model", 128)),
            n_layers=int(tcfg.get("n_layers", 2)),
            n_heads=int(tcfg.get("n_heads", 4)),
        )
        model = TransformerModel(spec=spec, seed=run_seed)
        task = TokenTask(model, train_ex, val_ex, vocab.pad_id)
        result = train(task, _train_config(tcfg, y_train, run_seed))
        write_training_log_csv(result.log, ws.training_log(model_name))
        params = model.params
        meta.update(
            {
                "kind": "transformer",
                "vocab_size": spec.vocab_size,
                "max_len": spec.max_len,
                "d_model": spec.d_model,
                "n_layers": spec.n_layers,
                "n_heads": spec.n_heads,
                "best_epoch": result.best_epoch,
                "stopped_epoch": result.stopped_epoch,
            }
        )
        outputs = [ws.checkpoint(model_name), ws.training_log(model_name)]

    save_checkpoint(ws.checkpoint(model_name), model_name, params, meta)
    RunManifest(ws.dir).record("train", {"model": model_name, "seed": run_seed}, config, run_seed, inputs, outputs)
    return {"model": model_name, "meta": meta}


def _rebuild_model(family: str, meta: dict, params: dict[str, np.ndarray]):
    if family in ("logistic", "hinge"):
        model = LinearModel(dim=int(meta["dim"]), loss=LossKind(meta["loss"]))
        model.params = {"w": params["w"], "b": params["b"]}
        return model
    if family == "stumps":
        return StumpEnsemble(
            stumps=[Stump(int(f), float(t), float(l), float(r)) for f, t, l, r in meta["stumps"]],
            base_score=float(meta["base_score"]),
            learning_rate=float(meta["learning_rate"]),
            n_rounds=int(meta["n_rounds"]),
        )
    if family == "tlstm":
        model = TlstmModel(
            input_dim=int(meta["input_dim"]),
            hidden_dim=int(meta["hidden_dim"]),
            fc_dim=int(meta["fc_dim"]),
        )
        model.params = params
        return model
    if family == "transformer":
        spec = TransformerParams(
            vocab_size=int(meta["vocab_size"]),
            max_len=int(meta["max_len"]),
            d_model=int(meta["d_model"]),
            n_layers=int(meta["n_layers"]),
            n_heads=int(meta["n_heads"]),
        )
        model = TransformerModel(spec=spec)
        model.params = params
        return model
    raise DataError(f"checkpoint with unknown family {family!r}")


def _test_scores(ws: Workspace, family: str, model, split: SplitAssignment, subset: Subset = Subset.TEST):
    """(scores_by_id, labels_by_id) on a subset for any family."""
    if family in SHALLOW_FAMILIES:
        X, y, ids = _read_onehot_csv(_need(ws.onehot, "hflab encode"))
        mask = _subset_mask(ids, split, subset)
        if family == "stumps":
            proba = model.predict_proba(X[mask])
        else:
            proba = sigmoid(model.scores(X[mask]))
        sel_ids = [pid for pid, m in zip(ids, mask) if m]
        labels = y[mask]
    elif family == "tlstm":
        seqs = [
            s for s in _read_sequences_jsonl(_need(ws.sequences, "hflab encode"))
            if split.assignment[s.patient_id] == subset
        ]
        logits, labels, sel_ids = model.scores(bucket_minibatches(seqs, 256))
        proba = sigmoid(logits)
    else:
        narratives = read_narratives_jsonl(_need(ws.narratives, "hflab encode"))
        vocab = load_vocab(_need(ws.vocab, "hflab vocab"))
        examples = _narratives_to_examples(narratives, vocab, set(split.ids(subset)))
        task = TokenTask(model, [], examples, vocab.pad_id)
        logits, labels = task.val_scores()
        sel_ids = [e.patient_id for e in examples]
        proba = sigmoid(logits)
    return {pid: float(p) for pid, p in zip(sel_ids, proba)}, {pid: int(l) for pid, l in zip(sel_ids, labels)}


def run_evaluate(outdir: str | Path, config: dict, model_name: str) -> dict:
    ws = Workspace(outdir)
    split = read_split_csv(_need(ws.split, "hflab encode"))
    family, meta, params = load_checkpoint(_need(ws.checkpoint(model_name), f"hflab train --model {model_name}"))
    model = _rebuild_model(family, meta, params)
    scores, labels = _test_scores(ws, family, model, split)
    ids = sorted(scores)
    report = compute_metrics(
        np.array([scores[i] for i in ids]), np.array([labels[i] for i in ids]), threshold=0.5
    )
    encoding = {"logistic": "one-hot", "hinge": "one-hot", "stumps": "one-hot", "tlstm": "sequence", "transformer": "subword"}[family]
    write_metrics_csv([{"model": model_name, "encoding": encoding, "report": report}], ws.metrics(model_name))
    RunManifest(ws.dir).record(
        "evaluate", {"model": model_name}, config, config["seed"], [ws.checkpoint(model_name), ws.split], [ws.metrics(model_name)]
    )
    return {"model": model_name, "report": report.as_dict()}


def run_subgroup(outdir: str | Path, config: dict, model_name: str) -> dict:
    ws = Workspace(outdir)
    split = read_split_csv(_need(ws.split, "hflab encode"))
    records = read_cohort_jsonl(_need(ws.cohort, "hflab label"))
    family, meta, params = load_checkpoint(_need(ws.checkpoint(model_name), f"hflab train --model {model_name}"))
    model = _rebuild_model(family, meta, params)
    scores, _ = _test_scores(ws, family, model, split)
    test_records = [r for r in split.select(records, Subset.TEST) if r.id in scores]
    rows = subgroup_eval(test_records, scores)
    write_metrics_csv(
        [{"group": row.group, "n": row.n, "report": row.report} for row in rows], ws.subgroups(model_name)
    )
    RunManifest(ws.dir).record(
        "subgroup", {"model": model_name}, config, config["seed"], [ws.checkpoint(model_name)], [ws.subgroups(model_name)]
    )
    return {"groups": {row.group: row.n for row in rows}}


# -- feature-combination study (evaluate --combos) ---------------------------


def run_combo_study(outdir: str | Path, config: dict, seed: int | None = None) -> dict:
    ws = Workspace(outdir)
    records = read_cohort_jsonl(_need(ws.cohort, "hflab label"))
    grouping = read_grouping_tsv(_need(ws.grouping, "hflab synth"))
    descriptions = read_descriptions_tsv(_need(ws.descriptions, "hflab synth"))
    split = read_split_csv(_need(ws.split, "hflab encode"))
    vocab = load_vocab(_need(ws.vocab, "hflab vocab"))
    run_seed = int(seed if seed is not None else config["seed"])
    min_patients = int(config["filter"]["min_patients"])

    def runner(model_name: str, combo_name: str) -> MetricReport:
        combo = FeatureCombo(combo_name)
        views = build_views(records, split, grouping, descriptions, min_patients, combo)
        tcfg = dict(config["train"].get(model_name, {}))
        if model_name == "tlstm":
            train_seqs = [v for v in views.sequences.values() if split.assignment[v.patient_id] == Subset.TRAIN]
            val_seqs = [v for v in views.sequences.values() if split.assignment[v.patient_id] == Subset.VALIDATION]
            test_seqs = [v for v in views.sequences.values() if split.assignment[v.patient_id] == Subset.TEST]
            y_train = np.array([1.0 if s.label == Label.CASE else 0.0 for s in train_seqs])
            model = TlstmModel(
                input_dim=views.seq_spec.input_dim,
                hidden_dim=int(tcfg.get("hidden_dim", 128)),
                fc_dim=int(tcfg.get("fc_dim", 64)),
                seed=run_seed,
            )
            train(SequenceTask(model, train_seqs, val_seqs), _train_config(tcfg, y_train, run_seed))
            logits, labels, _ = model.scores(bucket_minibatches(test_seqs, 256))
            return compute_metrics(sigmoid(logits), labels, 0.5)
        narr = list(views.narratives.values())
        train_ex = _narratives_to_examples(narr, vocab, set(split.ids(Subset.TRAIN)))
        val_ex = _narratives_to_examples(narr, vocab, set(split.ids(Subset.VALIDATION)))
        test_ex = _narratives_to_examples(narr, vocab, set(split.ids(Subset.TEST)))
        y_train = np.array([e.label for e in train_ex])
        spec = TransformerParams(
            vocab_size=len(vocab),
            max_len=vocab.max_len,
            d_model=int(tcfg.get("d_model", 128)),
            n_layers=int(tcfg.get("n_layers", 2)),
            n_heads=int(tcfg.get("n_heads", 4)),
        )
        model = TransformerModel(spec=spec, seed=run_seed)
        task = TokenTask(model, train_ex, val_ex, vocab.pad_id)
        train(task, _train_config(tcfg, y_train, run_seed))
        logits, labels = TokenTask(model, [], test_ex, vocab.pad_id).val_scores()
        return compute_metrics(sigmoid(logits), labels, 0.5)

    rows = feature_combination_study(runner, [("tlstm", "sequence"), ("transformer", "subword")])
    out = ws.path("combo_metrics.csv")
    write_metrics_csv(
        [{"model": r.model, "features": r.features, "encoding": r.encoding, "report": r.report} for r in rows],
        out,
    )
    RunManifest(ws.dir).record(
        "evaluate-combos",
        {"seed": run_seed},
        config,
        run_seed,
        [ws.cohort, ws.split, ws.vocab],
        [out],
    )
    return {"rows": len(rows), "path": out}


def run_explain(
    outdir: str | Path,
    config: dict,
    patient_id: str | None = None,
    n_samples: int | None = None,
    seed: int | None = None,
) -> dict:
    ws = Workspace(outdir)
    split = read_split_csv(_need(ws.split, "hflab encode"))
    narratives = read_narratives_jsonl(_need(ws.narratives, "hflab encode"))
    vocab = load_vocab(_need(ws.vocab, "hflab vocab"))
    family, meta, params = load_checkpoint(_need(ws.checkpoint("transformer"), "hflab train --model transformer"))
    model = _rebuild_model(family, meta, params)
    run_seed = int(seed if seed is not None else config["seed"])
    samples = int(n_samples if n_samples is not None else config["explain"]["n_samples"])

    def score_text(text: str) -> float:
        return model.predict_proba_ids(tokenize(text, vocab), vocab.pad_id)

    test_ids = set(split.ids(Subset.TEST))
    candidates = [v for v in narratives if v.patient_id in test_ids]
    if patient_id is not None:
        chosen = next((v for v in narratives if v.patient_id == patient_id), None)
        if chosen is None:
            raise DataError(f"patient {patient_id} has no narrative in {ws.narratives}")
    else:
        # default: the test case the model is most confident about
        cases = [v for v in candidates if v.label == Label.CASE] or candidates
        chosen = max(cases, key=lambda v: score_text(v.text))
    explanation = lime_explain(score_text, chosen.text, n_samples=samples, seed=run_seed)
    json_path = ws.path(f"explanation_{chosen.patient_id}.json")
    text_path = ws.path(f"explanation_{chosen.patient_id}.txt")
    write_explanation(explanation, json_path, text_path)
    RunManifest(ws.dir).record(
        "explain",
        {"patient_id": chosen.patient_id, "n_samples": samples, "seed": run_seed},
        config,
        run_seed,
        [ws.checkpoint("transformer"), ws.narratives, ws.vocab],
        [json_path, text_path],
    )
    return {"patient_id": chosen.patient_id, "path": json_path}


def dispatch_stage(command: str, config: dict, args: dict, outdir: str | Path) -> dict:
    """Re-invoke one pipeline stage from its manifest entry."""
    if command == "synth":
        return run_synth(outdir, config, seed=args.get("seed"))
    if command == "label":
        return run_label(outdir, config)
    if command == "encode":
        return run_encode(outdir, config, seed=args.get("seed"))
    if command == "vocab":
        return run_vocab(outdir, config)
    if command == "density":
        return run_density(outdir, config, args["encoding"], top_k=int(args.get("top_k", 400)))
    if command == "train":
        return run_train(outdir, config, args["model"], seed=args.get("seed"))
    if command == "evaluate":
        return run_evaluate(outdir, config, args["model"])
    if command == "evaluate-combos":
        return run_combo_study(outdir, config, seed=args.get("seed"))
    if command == "subgroup":
        return run_subgroup(outdir, config, args["model"])
    if command == "explain":
        return run_explain(
            outdir, config, patient_id=args.get("patient_id"), n_samples=args.get("n_samples"), seed=args.get("seed")
        )
    if command == "report":
        return run_report(outdir, config)
    raise DataError(f"manifest names unknown command {command!r}")


def replay_manifest(manifest_path: str | Path, outdir: str | Path) -> int:
    """Re-execute every stage recorded in a manifest into a fresh directory.

    Returns the number of stages replayed; with unchanged code and inputs
    the emitted artifacts are byte-identical to the original run.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"Missing manifest: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        stages = json.load(fh)["stages"]
    for stage in stages:
        dispatch_stage(stage["command"], stage["config"], stage.get("args", {}), outdir)
    return len(stages)


def run_report(outdir: str | Path, config: dict) -> dict:
    ws = Workspace(outdir)
    sections: list[str] = []

    def read_rows(path: Path) -> list[dict]:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))

    metric_cols = ["f1", "precision", "recall", "auc", "specificity", "accuracy"]
    model_files = sorted(ws.dir.glob("metrics_*.csv"))
    if model_files:
        rows = []
        for path in model_files:
            for row in read_rows(path):
                rows.append([row["model"], row["encoding"]] + [row[c] for c in metric_cols])
        sections.append(
            "Model comparison (test set)\n"
            + render_text_table(["model", "encoding"] + metric_cols, rows)
        )
    combo_path = ws.path("combo_metrics.csv")
    if combo_path.exists():
        rows = [
            [r["model"], r["features"], r["encoding"]] + [r[c] for c in metric_cols]
            for r in read_rows(combo_path)
        ]
        sections.append(
            "Feature combination study (test set)\n"
            + render_text_table(["model", "features", "encoding"] + metric_cols, rows)
        )
    subgroup_files = sorted(ws.dir.glob("subgroup_*.csv"))
    for path in subgroup_files:
        model_name = path.stem.replace("subgroup_", "")
        rows = [[r["group"], r["n"]] + [r[c] for c in metric_cols] for r in read_rows(path)]
        sections.append(
            f"Subgroup analysis ({model_name}, test set)\n"
            + render_text_table(["group", "n"] + metric_cols, rows)
        )
    if not sections:
        raise DataError(f"No metric CSVs found under {ws.dir}; run `hflab evaluate` first")
    report_path = ws.path("report.txt")
    report_path.write_text("\n".join(sections), encoding="utf-8")
    RunManifest(ws.dir).record("report", {}, config, config["seed"], [], [report_path])
    return {"path": report_path, "sections": len(sections)}
