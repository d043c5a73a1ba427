"""End-to-end PATE runs: split, teachers, voting, students, audit; plus sweeps,
bound verification and report files.

Everything random is derived from ``cfg.seed`` through keyed streams, so a
run is reproducible and repetitions are independent of evaluation order.
Students for all repetitions share initialization and batch order with the
clean student; only their targets differ.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import dataset as ds_mod
from .config import ExperimentConfig
from .dataset import Dataset, SplitSpec, SynthConfig
from .fairness import FairnessReport, audit
from .models import ModelParams, TrainConfig, init_params, layer_dims, sgd, train
from .privacy import PrivacyLedger, min_epsilon
from .rng import derive_seed, stream
from .voting import clamp_soft, clean_labels, ensemble_counts, flip_probs_mc, soft_labels

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline failure tagged with the stage it happened in."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


class _stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and not isinstance(ev, StageError) and isinstance(ev, Exception):
            raise StageError(self.name, ev) from ev
        return False


@dataclass(frozen=True)
class RunPoint:
    k: int
    sigma: float
    lam: float
    label_mode: str

    def key(self) -> dict[str, Any]:
        return {"lam": self.lam, "k": self.k, "sigma": self.sigma, "label_mode": self.label_mode}


@dataclass
class Prepared:
    full: Dataset
    private: Dataset
    public_train: Dataset
    public_test: Dataset


@dataclass
class StudentRun:
    theta_star: ModelParams
    theta_tilde: np.ndarray
    clean_targets: np.ndarray
    noisy_targets: np.ndarray


@dataclass
class RunRecord:
    config: dict[str, Any]
    point: RunPoint
    epsilon: float
    gamma: float
    teacher_accuracy: float
    report: FairnessReport
    wall_clock: float = 0.0
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def stats(self):
        return self.report.sensitivity

    def summary(self) -> dict[str, Any]:
        out = {**self.point.key(), "epsilon": self.epsilon, "gamma": self.gamma}
        out["teacher_accuracy"] = self.teacher_accuracy
        out.update(self.report.summary())
        return out

    def to_json(self, include_wall_clock: bool = True) -> dict[str, Any]:
        out = {"config": self.config, "summary": jsonable(self.summary())}
        out["accuracy_private_reps"] = [float(v) for v in self.report.accuracy_private_reps]
        out["per_rep_norms"] = [float(v) for v in self.report.sensitivity.per_rep_norms]
        if include_wall_clock:
            out["wall_clock"] = self.wall_clock
        return out


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# stages


def synth_config(cfg: ExperimentConfig) -> SynthConfig:
    seed = cfg.synth_seed if cfg.synth_seed >= 0 else derive_seed(cfg.seed, "synth")
    return SynthConfig(
        n=cfg.synth_n,
        d=cfg.synth_d,
        class_count=cfg.synth_class_count,
        group_fractions=cfg.synth_group_fractions,
        norm_scale_per_group=cfg.synth_norm_scales,
        label_noise=cfg.synth_label_noise,
        class_sep=cfg.synth_class_sep,
        seed=seed,
    )


def load_data(cfg: ExperimentConfig) -> Dataset:
    if cfg.csv_path:
        data = ds_mod.load_csv(cfg.csv_path, cfg.label_column, cfg.group_column, cfg.include_group_feature)
    else:
        data = ds_mod.synthesize(synth_config(cfg))
    return ds_mod.standardize(data) if cfg.standardize else data


def prepare(cfg: ExperimentConfig) -> Prepared:
    with _stage("data"):
        full = load_data(cfg)
        spec = SplitSpec(cfg.private_fraction, cfg.public_train_count, derive_seed(cfg.seed, "split"))
        private, pub, test = ds_mod.split(full, spec)
    return Prepared(full, private, pub, test)


def teacher_config(cfg: ExperimentConfig, k: int, i: int) -> TrainConfig:
    return TrainConfig(
        lam=cfg.teacher_lam,
        learning_rate=cfg.teacher_learning_rate,
        batch_size=cfg.teacher_batch_size,
        epochs=cfg.teacher_epochs,
        init_seed=derive_seed(cfg.seed, "teacher-init", k, i),
        shuffle_seed=derive_seed(cfg.seed, "teacher-shuffle", k, i),
    )


def train_teachers(cfg: ExperimentConfig, prep: Prepared, k: int) -> list[ModelParams]:
    with _stage("train-teachers"):
        shards = ds_mod.partition_teachers(prep.private, k, derive_seed(cfg.seed, "partition", k))
        C = prep.full.class_count
        return [
            train(s.features, s.labels, teacher_config(cfg, k, i), cfg.teacher_arch, cfg.hidden, C)
            for i, s in enumerate(shards)
        ]


def student_config(cfg: ExperimentConfig, lam: float) -> TrainConfig:
    # shared by the clean student and every private repetition
    return TrainConfig(
        lam=lam,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        init_seed=derive_seed(cfg.seed, "student-init"),
        shuffle_seed=derive_seed(cfg.seed, "student-shuffle"),
    )


def vote_noise(cfg: ExperimentConfig, m: int, C: int) -> np.ndarray:
    """Standard-normal vote perturbations ``(R, m, C)``; scaled by sigma at use.

    One stream per repetition, shared by every sweep point, so sweeps over
    sigma, k or the label mode compare runs under common random numbers.
    """
    return np.stack([stream(cfg.seed, "vote", r).standard_normal((m, C)) for r in range(cfg.repetitions)])


def label_targets(counts: np.ndarray, noise: np.ndarray, sigma: float, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Clean ``(m, C)`` and noisy ``(R, m, C)`` training targets for a label mode."""
    counts = np.asarray(counts, dtype=float)
    C = counts.shape[1]
    if mode == "hard":
        clean = np.eye(C)[clean_labels(counts)]
        if sigma == 0:
            return clean, np.broadcast_to(clean, noise.shape).copy()
        return clean, np.eye(C)[np.argmax(counts + sigma * noise, axis=-1)]
    clean = soft_labels(counts)
    if sigma == 0:
        return clean, np.broadcast_to(clean, noise.shape).copy()
    raw = (counts + sigma * noise) / counts.sum(axis=-1, keepdims=True)
    return clean, (clamp_soft(raw) if mode == "soft-clamped" else raw)


def train_students(
    cfg: ExperimentConfig,
    prep: Prepared,
    counts: np.ndarray,
    point: RunPoint,
    noise: np.ndarray | None = None,
) -> StudentRun:
    with _stage("train-student"):
        X = prep.public_train.features
        C = counts.shape[1]
        if noise is None:
            noise = vote_noise(cfg, X.shape[0], C)
        clean, noisy = label_targets(counts, noise, point.sigma, point.label_mode)
        tc = student_config(cfg, point.lam)
        dims = layer_dims(cfg.student_arch, X.shape[1], C, cfg.hidden)
        p0 = init_params(cfg.student_arch, dims, tc.init_seed, C)
        star = sgd(cfg.student_arch, dims, p0.theta, X, clean, tc).thetas[0]
        tilde = sgd(cfg.student_arch, dims, np.broadcast_to(p0.theta, (noisy.shape[0], p0.theta.size)), X, noisy, tc).thetas
        return StudentRun(p0.with_theta(star), tilde, clean, noisy)


def reference_model(cfg: ExperimentConfig, prep: Prepared) -> ModelParams:
    """Classifier fit to the public set's true labels, used for closeness to the boundary."""
    pub = prep.public_train
    tc = TrainConfig(
        lam=cfg.teacher_lam,
        learning_rate=cfg.teacher_learning_rate,
        batch_size=cfg.teacher_batch_size,
        epochs=cfg.teacher_epochs,
        init_seed=derive_seed(cfg.seed, "reference-init"),
        shuffle_seed=derive_seed(cfg.seed, "reference-shuffle"),
    )
    return train(pub.features, pub.labels, tc, cfg.student_arch, cfg.hidden, prep.full.class_count)


def epsilon_for(cfg: ExperimentConfig, sigma: float) -> tuple[float, float]:
    if sigma == 0:
        return math.inf, math.nan
    return min_epsilon(PrivacyLedger(sigma, cfg.public_train_count, cfg.delta))


def iter_points(cfg: ExperimentConfig) -> Iterable[RunPoint]:
    for lam, k, sigma, mode in itertools.product(cfg.lam, cfg.teachers, cfg.sigma, cfg.label_mode):
        yield RunPoint(int(k), float(sigma), float(lam), mode)


class Pipeline:
    """Caches the stages that sweep points share (data, teachers, votes, noise)."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.prep = prepare(cfg)
        self._teachers: dict[int, list[ModelParams]] = {}
        self._counts: dict[int, np.ndarray] = {}
        self._flip: dict[tuple[int, float], tuple[np.ndarray, np.ndarray]] = {}
        self._reference: ModelParams | None = None
        self._students: dict[RunPoint, StudentRun] = {}
        C = self.prep.full.class_count
        self.noise = vote_noise(cfg, self.prep.public_train.n, C)

    def teachers(self, k: int) -> list[ModelParams]:
        if k not in self._teachers:
            self._teachers[k] = train_teachers(self.cfg, self.prep, k)
        return self._teachers[k]

    def counts(self, k: int) -> np.ndarray:
        if k not in self._counts:
            with _stage("vote"):
                self._counts[k] = ensemble_counts(self.teachers(k), self.prep.public_train.features)
        return self._counts[k]

    def teacher_accuracy(self, k: int) -> float:
        pub = self.prep.public_train
        return float(np.mean(clean_labels(self.counts(k)) == pub.labels))

    def flip_probs(self, k: int, sigma: float) -> tuple[np.ndarray, np.ndarray]:
        if (k, sigma) not in self._flip:
            m = self.prep.public_train.n
            if sigma == 0:
                self._flip[(k, sigma)] = (np.zeros(m), np.zeros(m))
            else:
                rng = stream(self.cfg.seed, "flip", k)
                self._flip[(k, sigma)] = flip_probs_mc(self.counts(k), sigma, rng, self.cfg.flip_trials)
        return self._flip[(k, sigma)]

    def reference(self) -> ModelParams:
        if self._reference is None:
            with _stage("reference-model"):
                self._reference = reference_model(self.cfg, self.prep)
        return self._reference

    def students(self, point: RunPoint) -> StudentRun:
        if point not in self._students:
            self._students[point] = train_students(self.cfg, self.prep, self.counts(point.k), point, self.noise)
        return self._students[point]

    def preload(self, teachers=None, counts=None, students=None) -> None:
        """Seed the stage caches with artifacts loaded from disk."""
        self._teachers.update(teachers or {})
        self._counts.update(counts or {})
        self._students.update(students or {})

    def run(self, point: RunPoint) -> RunRecord:
        t0 = time.perf_counter()
        cfg = self.cfg
        students = self.students(point)
        flip, flip_se = self.flip_probs(point.k, point.sigma)
        pub, test = self.prep.public_train, self.prep.public_test
        with _stage("audit"):
            report = audit(
                students.theta_star,
                students.theta_tilde,
                pub.features,
                pub.groups,
                students.clean_targets,
                point.lam,
                flip,
                flip_se,
                self.reference(),
                X_test=test.features,
                y_test=test.labels,
                group_count=self.prep.full.group_count,
                correlation_permutations=cfg.permutations,
                seed=derive_seed(cfg.seed, "permutation"),
            )
        eps, gamma = epsilon_for(cfg, point.sigma)
        point_cfg = cfg.replace(teachers=(point.k,), sigma=(point.sigma,), lam=(point.lam,), label_mode=(point.label_mode,))
        return RunRecord(
            config=point_cfg.to_dict(),
            point=point,
            epsilon=eps,
            gamma=gamma,
            teacher_accuracy=self.teacher_accuracy(point.k),
            report=report,
            wall_clock=time.perf_counter() - t0,
        )


def run_pipeline(cfg: ExperimentConfig) -> RunRecord:
    """One full run; the sweep keys must each hold a single value."""
    points = list(iter_points(cfg))
    if len(points) != 1:
        raise ValueError(f"run_pipeline needs single-valued sweep keys; got {len(points)} combinations (use sweep)")
    return Pipeline(cfg).run(points[0])


def sweep(cfg: ExperimentConfig) -> list[RunRecord]:
    """All combinations of (lam, k, sigma, label_mode), sharing cached stages."""
    pipe = Pipeline(cfg)
    records = []
    for point in iter_points(cfg):
        log.info("running %s", point)
        records.append(pipe.run(point))
    return records


# ---------------------------------------------------------------------------
# bound verification


@dataclass
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    slack: float
    passed: bool

    @property
    def margin(self) -> float:
        return self.rhs + self.slack - self.lhs


@dataclass
class BoundReport:
    point: RunPoint
    checks: list[BoundCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def check_bounds(record: RunRecord, coverage: float = 0.99) -> BoundReport:
    """Compare empirical sensitivity and risk with their upper bounds.

    Each inequality may exceed its bound by one Monte Carlo standard error.
    The per-sample risk uses the loss-only excess (the quantity the risk
    bound is about) and must hold on at least ``coverage`` of the samples.
    """
    rep = record.report
    st = rep.sensitivity
    checks = [
        BoundCheck("u1<=thm1", st.u1, rep.thm1, st.u1_se, st.u1 <= rep.thm1 + st.u1_se),
        BoundCheck("u2<=cor2", st.u2, rep.cor2, st.u2_se, st.u2 <= rep.cor2 + st.u2_se),
    ]
    ok = rep.risk_loss_only <= rep.thm3 + rep.risk_loss_only_se
    frac = float(np.mean(ok))
    worst = int(np.argmin(rep.thm3 + rep.risk_loss_only_se - rep.risk_loss_only))
    checks.append(
        BoundCheck(
            f"R(x)<=thm3 on {frac:.1%} of samples",
            float(rep.risk_loss_only[worst]),
            float(rep.thm3[worst]),
            float(rep.risk_loss_only_se[worst]),
            frac >= coverage,
        )
    )
    return BoundReport(record.point, checks)


def verify_bounds(cfg: ExperimentConfig) -> list[BoundReport]:
    if cfg.student_arch != "logistic":
        raise ValueError("bound verification needs a logistic-regression student")
    hard = cfg.replace(label_mode=("hard",))
    return [check_bounds(r) for r in sweep(hard)]


# ---------------------------------------------------------------------------
# report files

LONG_FIELDS = (
    "lam",
    "k",
    "sigma",
    "label_mode",
    "epsilon",
    "gamma",
    "u1",
    "u2",
    "u1_se",
    "u2_se",
    "thm1_rhs",
    "cor2_rhs",
    "population_risk",
    "risk_gap",
    "group",
    "group_risk",
    "group_size",
    "mean_flip_prob",
    "accuracy_private",
    "accuracy_nonprivate",
    "teacher_accuracy",
)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def long_rows(records: Iterable[RunRecord]) -> list[dict[str, Any]]:
    """One row per (run, group)."""
    rows = []
    for rec in records:
        s = rec.summary()
        for a, risk in rec.report.group_risk.items():
            row = {k: s.get(k) for k in LONG_FIELDS if k in s}
            row.update(group=a, group_risk=risk, group_size=int(np.sum(rec.report.groups == a)))
            rows.append(row)
    return rows


def write_long_csv(records: Iterable[RunRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(LONG_FIELDS))
        w.writeheader()
        for row in long_rows(records):
            w.writerow({k: _fmt(v) for k, v in row.items()})


def read_long_csv(path: str | Path) -> list[dict[str, Any]]:
    ints = {"k", "group", "group_size"}
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for k, v in row.items():
                if k == "label_mode":
                    parsed[k] = v
                elif k in ints:
                    parsed[k] = int(v)
                else:
                    parsed[k] = float(v)
            out.append(parsed)
    return out


def write_samples_csv(record: RunRecord, path: str | Path) -> None:
    """Wide per-sample table of the audit."""
    cols = record.report.columns()
    names = list(cols)
    m = len(record.report.risk)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", *names])
        for i in range(m):
            w.writerow([i, *(_fmt(cols[n][i]) for n in names)])


def point_tag(point: RunPoint) -> str:
    return f"lam{point.lam:g}_k{point.k}_sigma{point.sigma:g}_{point.label_mode}"


def write_record(record: RunRecord, outdir: str | Path, stem: str = "") -> dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    pre = f"{stem}_" if stem else ""
    paths = {
        "samples": outdir / f"{pre}fairness_samples.csv",
        "summary": outdir / f"{pre}fairness_summary.json",
        "figure5": outdir / f"{pre}figure5_norm_vs_risk.csv",
        "figure7": outdir / f"{pre}figure7_closeness_vs_flip.csv",
    }
    write_samples_csv(record, paths["samples"])
    paths["summary"].write_text(json.dumps(jsonable(record.to_json()), indent=2))
    rep = record.report
    _write_columns(paths["figure5"], {"group": rep.groups, "input_norm": rep.input_norm, "excess_risk": rep.risk, "grad_norm": rep.grad_norm})
    _write_columns(paths["figure7"], {"group": rep.groups, "closeness": rep.closeness, "flip_prob": rep.flip_prob, "excess_risk": rep.risk})
    return paths


def _write_columns(path: Path, cols: dict[str, np.ndarray]) -> None:
    names = list(cols)
    n = len(next(iter(cols.values())))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(n):
            w.writerow([_fmt(cols[c][i]) for c in names])


FIGURE_AXES = {
    "figure2_lambda": "lam",
    "figure3_flip_vs_k": "k",
    "figure4_k": "k",
    "figure6_mitigation": "sigma",
}


def write_sweep(records: list[RunRecord], cfg: ExperimentConfig, outdir: str | Path) -> dict[str, Path]:
    """Long-form CSV for the whole sweep plus one file per figure whose axis varies."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"long": outdir / "sweep_long.csv", "config": outdir / "effective_config.json"}
    write_long_csv(records, paths["long"])
    paths["config"].write_text(json.dumps(cfg.to_dict(), indent=2))
    varying = {"lam": len(cfg.lam) > 1, "k": len(cfg.teachers) > 1, "sigma": len(cfg.sigma) > 1 or len(cfg.label_mode) > 1}
    for name, axis in FIGURE_AXES.items():
        if varying[axis]:
            paths[name] = outdir / f"{name}.csv"
            write_long_csv(records, paths[name])
    return paths


__all__ = [
    "BoundCheck",
    "BoundReport",
    "Pipeline",
    "Prepared",
    "RunPoint",
    "RunRecord",
    "StageError",
    "check_bounds",
    "iter_points",
    "jsonable",
    "label_targets",
    "point_tag",
    "prepare",
    "read_long_csv",
    "run_pipeline",
    "sweep",
    "train_students",
    "train_teachers",
    "verify_bounds",
    "write_long_csv",
    "write_record",
    "write_sweep",
]
