"""Training harness: mini-batch Adam on MAE loss, k-fold cross-validation,
and paired geometry-only / multimodal ablation runs per target.

Determinism contract: a config fully determines fold assignment, parameter
initialization and batch order, so repeated runs produce bit-identical
reports. Targets are normalized on the training split only; reported MAE is
always in native units.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, EncoderParams, encode_batch
from .fusion import FusionConfig, FusionParams, fuse, geometry_only_head, predict
from .graphs import RbfConfig, batch_graphs
from .qm9 import DegenerateTargetError, TargetId, TargetScaler
from .textfeat import EMBED_DIM, ProjectionHead, project

log = logging.getLogger(__name__)

MODALITIES = ("geometry_only", "multimodal")
CSV_COLUMNS = ("target", "modality", "seed", "fold", "mae")


class ConfigError(Exception):
    """Invalid training configuration."""


class TrainingAbort(Exception):
    """Non-finite gradient; carries the step counter and parameter name."""

    def __init__(self, step: int, param: str):
        super().__init__(f"non-finite gradient for {param!r} at step {step}")
        self.step = step
        self.param = param


class ReportSchemaError(Exception):
    """A results CSV does not match the expected schema."""


@dataclass
class TrainConfig:
    target: TargetId
    modality: str = "geometry_only"
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    folds: int = 3
    seed: int = 0
    n_runs: int = 3
    embedding_source: str = "featurizer"   # featurizer | file
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    rbf: RbfConfig = field(default_factory=RbfConfig)
    text_dim: int = 16

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.n_runs < 1:
            raise ConfigError(f"n_runs must be >= 1, got {self.n_runs}")
        if self.modality not in MODALITIES:
            raise ConfigError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.embedding_source not in ("featurizer", "file"):
            raise ConfigError(f"embedding_source must be featurizer or file, got {self.embedding_source!r}")
        if self.encoder.n_rbf != self.rbf.n_centers:
            raise ConfigError(
                f"encoder expects {self.encoder.n_rbf} RBF features but the graph builder "
                f"produces {self.rbf.n_centers}"
            )


@dataclass
class Sample:
    """One training example: graph, all scalar targets, optional text vector."""

    mol_id: str
    graph: object
    targets: dict                 # TargetId -> float, native units
    text: np.ndarray | None = None

    def y(self, target: TargetId) -> float:
        return self.targets[target]


def split_folds(n_samples: int, k: int, seed: int):
    """k disjoint index lists covering range(n_samples), sizes differing by
    at most 1; deterministic in seed."""
    if n_samples < k:
        raise ConfigError(f"cannot split {n_samples} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n_samples)
    base, extra = divmod(n_samples, k)
    folds, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(sorted(int(x) for x in perm[start:start + size]))
        start += size
    return folds


def fold_assignment_hash(folds) -> str:
    return hashlib.sha256(json.dumps(folds).encode()).hexdigest()


# ------------------------------------------------------------------ Adam

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, params) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params},
            v={name: np.zeros_like(p.data) for name, p in params},
        )


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update, in place on the parameter data."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingAbort(state.t, name)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ------------------------------------------------------------------ model

class Model:
    """Parameter bundle for one modality; prefixes keep the checkpoint
    container namespaced."""

    def __init__(self, modality: str, encoder: EncoderParams, head: FusionParams,
                 projection: ProjectionHead | None):
        self.modality = modality
        self.encoder = encoder
        self.head = head
        self.projection = projection

    @classmethod
    def init(cls, cfg: TrainConfig, seed: int) -> "Model":
        ss = np.random.SeedSequence([seed, 0xF0]).generate_state(3)
        encoder = EncoderParams.init(cfg.encoder, seed=int(ss[0]))
        head = FusionParams.init(FusionConfig(n=cfg.encoder.n_hidden, d=cfg.text_dim), seed=int(ss[1]))
        projection = None
        if cfg.modality == "multimodal":
            projection = ProjectionHead.init(d=cfg.text_dim, seed=int(ss[2]))
        return cls(cfg.modality, encoder, head, projection)

    def named_params(self):
        out = [(f"encoder/{k}", t) for k, t in self.encoder.named_params()]
        out += [(f"fusion/{k}", t) for k, t in self.head.named_params(self.modality)]
        if self.modality == "multimodal" and self.projection is not None:
            out += [(f"proj/{k}", t) for k, t in self.projection.named_params()]
        return out

    def n_parameters(self) -> int:
        return sum(t.data.size for _, t in self.named_params())

    def forward(self, graph_batch, text_rows: np.ndarray | None):
        """Predictions (B x 1) on the normalized target scale, plus the gate
        rows for multimodal inspection (None for the baseline)."""
        g = encode_batch(graph_batch, self.encoder)
        if self.modality == "geometry_only":
            return geometry_only_head(g, self.head), None
        t_p = project(ad.Tensor(text_rows), self.projection)
        fused = fuse(g, t_p, self.head)
        return predict(fused.f, self.head), fused.gate

    def zero_grads(self) -> None:
        for _, p in self.named_params():
            p.zero_grad()

    def export_arrays(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_params()}


def parameter_counts(cfg: TrainConfig) -> dict:
    """Trainable parameter count per modality (the ablation report states
    the difference, which is exactly the text pathway)."""
    counts = {}
    for modality in MODALITIES:
        probe = TrainConfig(**{**cfg.__dict__, "modality": modality})
        counts[modality] = Model.init(probe, seed=0).n_parameters()
    return counts


# ------------------------------------------------------------------ fit / eval

def _batch_tensors(samples, indices, target: TargetId, scaler: TargetScaler):
    graphs = [samples[i].graph for i in indices]
    ys = np.array([[scaler.normalize(samples[i].y(target))] for i in indices], dtype=np.float64)
    texts = None
    if samples[indices[0]].text is not None:
        texts = np.stack([samples[i].text for i in indices])
    return batch_graphs(graphs), texts, ys


def _require_texts(cfg: TrainConfig, samples) -> None:
    if cfg.modality != "multimodal":
        return
    missing = [s.mol_id for s in samples if s.text is None]
    if missing:
        raise ConfigError(
            f"multimodal run but {len(missing)} samples lack text vectors (first: {missing[0]})"
        )
    for s in samples:
        if s.text.shape != (EMBED_DIM,):
            raise ConfigError(f"sample {s.mol_id}: text vector shape {s.text.shape} != ({EMBED_DIM},)")


def _fit_scaler(values) -> TargetScaler:
    """Training-side normalization: a constant target is a legitimate
    degenerate regression (the model learns the mean), so zero variance
    falls back to unit scale instead of erroring like the user-facing
    normalize op."""
    try:
        return TargetScaler.fit(values)
    except DegenerateTargetError:
        return TargetScaler(mean=float(np.mean(list(values))), std=1.0)


@dataclass
class FitResult:
    model: Model
    train_mae: float               # native units, on the fit split
    steps: int


def fit(cfg: TrainConfig, samples, run_seed: int, init_seed: int | None = None) -> FitResult:
    """Train one model on the given samples (no held-out split here)."""
    if not samples:
        raise ConfigError("empty training set")
    _require_texts(cfg, samples)
    if init_seed is None:
        init_seed = run_seed
    model = Model.init(cfg, seed=init_seed)
    scaler = _fit_scaler([s.y(cfg.target) for s in samples])
    params = model.named_params()
    state = AdamState.zeros(params)
    order_rng = np.random.default_rng(np.random.SeedSequence([run_seed, 0x0D]))

    n = len(samples)
    steps = 0
    for _ in range(cfg.epochs):
        order = order_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = [int(i) for i in order[start:start + cfg.batch_size]]
            graph_batch, texts, ys = _batch_tensors(samples, idx, cfg.target, scaler)
            pred, _ = model.forward(graph_batch, texts)
            loss = ad.mean_all(ad.abs_(ad.sub(pred, ad.Tensor(ys))))
            model.zero_grads()
            loss.backward()
            grads = {name: p.grad for name, p in params}
            adam_step(params, grads, state, cfg.learning_rate)
            steps += 1
    model.zero_grads()
    return FitResult(model=model, train_mae=evaluate_mae(model, samples, cfg.target, scaler), steps=steps)


def evaluate_mae(model: Model, samples, target: TargetId, scaler: TargetScaler,
                 collect_gates: bool = False):
    """Mean absolute error in native units, recomputed from de-normalized
    predictions. Optionally also returns flattened gate values."""
    graph_batch, texts, _ = _batch_tensors(samples, list(range(len(samples))), target, scaler)
    pred, gate = model.forward(graph_batch, texts)
    y_hat = scaler.denormalize(pred.data[:, 0])
    y_true = np.array([s.y(target) for s in samples])
    mae = float(np.abs(y_true - y_hat).mean())
    if collect_gates:
        return mae, (gate.data.ravel().copy() if gate is not None else None)
    return mae


@dataclass
class FoldOutcome:
    fold: int
    mae: float
    train_mae: float
    gates: np.ndarray | None = None
    model: Model | None = None


def cross_validate(cfg: TrainConfig, samples, run_seed: int, folds=None,
                   collect_gates: bool = False, keep_models: bool = False):
    """Train on k-1 folds, evaluate on the held-out fold, for every fold.

    Normalization statistics come from the training folds only. Returns a
    list of FoldOutcome in fold order.
    """
    if not samples:
        raise ConfigError("empty dataset")
    _require_texts(cfg, samples)
    if folds is None:
        folds = split_folds(len(samples), cfg.folds, cfg.seed)
    if any(not f for f in folds):
        raise ConfigError("fold assignment produced an empty fold")

    outcomes = []
    for fold_idx, held_out in enumerate(folds):
        train_idx = [i for f_idx, f in enumerate(folds) if f_idx != fold_idx for i in f]
        train_samples = [samples[i] for i in train_idx]
        val_samples = [samples[i] for i in held_out]
        init_seed = int(np.random.SeedSequence([run_seed, fold_idx]).generate_state(1)[0])
        result = fit(cfg, train_samples, run_seed=init_seed, init_seed=init_seed)
        scaler = _fit_scaler([s.y(cfg.target) for s in train_samples])
        if collect_gates:
            mae, gates = evaluate_mae(result.model, val_samples, cfg.target, scaler, collect_gates=True)
        else:
            mae, gates = evaluate_mae(result.model, val_samples, cfg.target, scaler), None
        outcomes.append(FoldOutcome(fold=fold_idx, mae=mae, train_mae=result.train_mae, gates=gates,
                                    model=result.model if keep_models else None))
    return outcomes


def train(cfg: TrainConfig, samples):
    """Convenience entry: per-fold validation MAE list plus their mean."""
    outcomes = cross_validate(cfg, samples, run_seed=cfg.seed)
    maes = [o.mae for o in outcomes]
    return maes, float(np.mean(maes))


# ------------------------------------------------------------------ ablation

def percent_change(mae_base: float, mae_multi: float) -> float:
    """100·(base − multi)/base; positive means the multimodal model improved
    (lower MAE), matching the report's arrow convention."""
    if mae_base <= 0:
        raise ValueError(f"baseline MAE must be positive, got {mae_base}")
    return 100.0 * (mae_base - mae_multi) / mae_base


@dataclass
class AblationRow:
    target: str
    modality: str
    seed: int
    fold: int
    mae: float


@dataclass
class TargetSummary:
    target: str
    mae_geometry: float
    mae_multimodal: float
    percent_change: float
    n_runs: int
    seeds: list
    fold_hash: str


@dataclass
class AblationReport:
    rows: list
    summaries: dict                 # target name -> TargetSummary
    fold_hash: str
    parameter_counts: dict
    runs_note: str = "independent runs = parameter-init/batch-order seeds over one fixed fold assignment"
    gates: dict = field(default_factory=dict)   # target name -> np.ndarray
    models: dict = field(default_factory=dict)  # (target name, modality) -> Model, last seed/fold

    def to_json(self) -> str:
        return json.dumps({
            "rows": [row.__dict__ for row in self.rows],
            "summaries": {k: {**s.__dict__} for k, s in self.summaries.items()},
            "fold_hash": self.fold_hash,
            "parameter_counts": self.parameter_counts,
            "runs_note": self.runs_note,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AblationReport":
        obj = json.loads(text)
        return cls(
            rows=[AblationRow(**r) for r in obj["rows"]],
            summaries={k: TargetSummary(**s) for k, s in obj["summaries"].items()},
            fold_hash=obj["fold_hash"],
            parameter_counts=obj["parameter_counts"],
            runs_note=obj["runs_note"],
        )


def run_ablation(samples, targets, cfg: TrainConfig) -> AblationReport:
    """For each target, run geometry-only and multimodal with identical
    folds and seeds, average over cfg.n_runs seeds, and build the report."""
    folds = split_folds(len(samples), cfg.folds, cfg.seed)
    fhash = fold_assignment_hash(folds)
    seeds = [cfg.seed + i for i in range(cfg.n_runs)]

    rows = []
    summaries = {}
    gates_by_target = {}
    last_models = {}
    for target in targets:
        per_modality = {}
        for modality in MODALITIES:
            run_cfg = TrainConfig(**{**cfg.__dict__, "target": target, "modality": modality})
            maes = []
            for run_seed in seeds:
                last = run_seed == seeds[-1]
                collect = modality == "multimodal" and last
                outcomes = cross_validate(run_cfg, samples, run_seed=run_seed,
                                          folds=folds, collect_gates=collect, keep_models=last)
                for o in outcomes:
                    rows.append(AblationRow(target.value, modality, run_seed, o.fold, o.mae))
                    maes.append(o.mae)
                if collect:
                    gathered = [o.gates for o in outcomes if o.gates is not None]
                    if gathered:
                        gates_by_target[target.value] = np.concatenate(gathered)
                if last:
                    last_models[(target.value, modality)] = outcomes[-1].model
            per_modality[modality] = float(np.mean(maes))
        summaries[target.value] = TargetSummary(
            target=target.value,
            mae_geometry=per_modality["geometry_only"],
            mae_multimodal=per_modality["multimodal"],
            percent_change=percent_change(per_modality["geometry_only"], per_modality["multimodal"]),
            n_runs=cfg.n_runs,
            seeds=seeds,
            fold_hash=fhash,
        )
        log.info("ablation %s: geometry %.6g, multimodal %.6g",
                 target.value, per_modality["geometry_only"], per_modality["multimodal"])
    return AblationReport(rows=rows, summaries=summaries, fold_hash=fhash,
                          parameter_counts=parameter_counts(cfg), gates=gates_by_target,
                          models=last_models)


# ------------------------------------------------------------------ CSV

def write_rows_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([row.target, row.modality, row.seed, row.fold, repr(float(row.mae))])


def read_rows_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(CSV_COLUMNS):
            raise ReportSchemaError(f"{path}: header {header} != {list(CSV_COLUMNS)}")
        rows = []
        for record in reader:
            if len(record) != len(CSV_COLUMNS):
                raise ReportSchemaError(f"{path}: row {record} has {len(record)} fields")
            try:
                rows.append(AblationRow(record[0], record[1], int(record[2]), int(record[3]), float(record[4])))
            except ValueError as err:
                raise ReportSchemaError(f"{path}: row {record}: {err}") from None
        return rows
