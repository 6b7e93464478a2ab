"""Two-stage error-upweighting training and accuracy-constrained tuning.

Stage 1 trains a deliberately plain model for T epochs and collects the
training rows it misclassifies; stage 2 retrains with those rows repeated
lambda times. The tuner sweeps every (stage-1 point, T, lambda, stage-2
point, stage-2 epoch) combination, buckets candidates into half-open average
validation-accuracy bins, and picks the candidate per bin that optimizes a
fairness objective measured on the validation set's (pseudo or ground-truth)
sensitive labels. Winners are re-scored on the test split with ground truth.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import TabularDataset
from .labelling import PseudoLabelledValidation
from .metrics import (
    METRIC_NAMES,
    EmptyGroupError,
    FairnessReport,
    dp_gap,
    eo_gap,
    report_from_predictions,
    wga,
)
from .training import (
    HyperParams,
    ModelParams,
    TrainingError,
    _train_loop,
    predict,
    train_erm,
    train_upsampled,
)

GROUND_TRUTH = "ground_truth"
PSEUDO = "pseudo"

_MINIMIZED = {"dp_gap": True, "eo_gap": True, "wga": False}


@dataclass(frozen=True)
class JttConfig:
    """Search space and selection rule for the two-stage tuner."""

    stage1_grid: tuple[HyperParams, ...]
    t_grid: tuple[int, ...]
    lambda_grid: tuple[int, ...]
    stage2_grid: tuple[HyperParams, ...]
    objective: str
    accuracy_bins: tuple[tuple[float, float], ...]
    sensitive_source: str = PSEUDO

    def __post_init__(self) -> None:
        for name in ("stage1_grid", "t_grid", "lambda_grid", "stage2_grid", "accuracy_bins"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be nonempty")
        object.__setattr__(self, "stage1_grid", tuple(self.stage1_grid))
        object.__setattr__(self, "stage2_grid", tuple(self.stage2_grid))
        object.__setattr__(self, "t_grid", tuple(int(t) for t in self.t_grid))
        object.__setattr__(self, "lambda_grid", tuple(int(l) for l in self.lambda_grid))
        if any(t < 1 for t in self.t_grid):
            raise ValueError("t_grid entries must be >= 1")
        if any(l < 1 for l in self.lambda_grid):
            raise ValueError("lambda_grid entries must be >= 1")
        if self.objective not in METRIC_NAMES:
            raise ValueError(f"objective must be one of {METRIC_NAMES}")
        if self.sensitive_source not in (PSEUDO, GROUND_TRUTH):
            raise ValueError(f"sensitive_source must be {PSEUDO!r} or {GROUND_TRUTH!r}")
        bins = tuple((float(lo), float(hi)) for lo, hi in self.accuracy_bins)
        for lo, hi in bins:
            if not lo < hi:
                raise ValueError(f"bin [{lo}, {hi}) is empty")
        ordered = sorted(bins)
        for (lo1, hi1), (lo2, _) in zip(ordered, ordered[1:]):
            if hi1 > lo2:
                raise ValueError(f"bins [{lo1}, {hi1}) and [{lo2}, ...) overlap")
        object.__setattr__(self, "accuracy_bins", bins)

    def to_dict(self) -> dict:
        return {
            "stage1_grid": [hp.to_dict() for hp in self.stage1_grid],
            "t_grid": list(self.t_grid),
            "lambda_grid": list(self.lambda_grid),
            "stage2_grid": [hp.to_dict() for hp in self.stage2_grid],
            "objective": self.objective,
            "accuracy_bins": [list(b) for b in self.accuracy_bins],
            "sensitive_source": self.sensitive_source,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "JttConfig":
        return cls(
            stage1_grid=tuple(HyperParams.from_dict(h) for h in d["stage1_grid"]),
            t_grid=tuple(d["t_grid"]),
            lambda_grid=tuple(d["lambda_grid"]),
            stage2_grid=tuple(HyperParams.from_dict(h) for h in d["stage2_grid"]),
            objective=d["objective"],
            accuracy_bins=tuple((b[0], b[1]) for b in d["accuracy_bins"]),
            sensitive_source=d.get("sensitive_source", PSEUDO),
        )


@dataclass(frozen=True)
class CandidateRef:
    """Identifies one evaluated candidate; enough to retrain it exactly."""

    kind: str  # "jtt" or "erm"
    stage2: HyperParams
    epoch: int
    stage1: HyperParams | None = None
    t: int | None = None
    lam: int | None = None
    plain_fallback: bool = False  # stage 1 made no training mistakes

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "stage2": self.stage2.to_dict(),
            "epoch": self.epoch,
            "stage1": None if self.stage1 is None else self.stage1.to_dict(),
            "t": self.t,
            "lambda": self.lam,
            "plain_fallback": self.plain_fallback,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CandidateRef":
        return cls(
            kind=d["kind"],
            stage2=HyperParams.from_dict(d["stage2"]),
            epoch=int(d["epoch"]),
            stage1=None if d.get("stage1") is None else HyperParams.from_dict(d["stage1"]),
            t=None if d.get("t") is None else int(d["t"]),
            lam=None if d.get("lambda") is None else int(d["lambda"]),
            plain_fallback=bool(d.get("plain_fallback", False)),
        )


@dataclass(frozen=True)
class JttOutcome:
    """Final stage-2 model plus stage-1 provenance."""

    model: ModelParams
    stage1_error_ids: tuple[int, ...]
    plain_erm: bool


def stage1_error_ids(model: ModelParams, train: TabularDataset) -> np.ndarray:
    """Row ids of training rows the stage-1 model misclassifies."""
    preds = predict(model, train)
    return train.row_ids[preds != train.targets]


def jtt_train(
    train: TabularDataset,
    stage1_hp: HyperParams,
    t: int,
    lam: int,
    stage2_hp: HyperParams,
) -> JttOutcome:
    """Run both stages and return the final stage-2 model.

    A stage 1 that classifies the whole training set correctly yields an
    empty repeat set; the result is then a plain single-stage model, flagged
    rather than raised.
    """
    if not 1 <= t <= stage1_hp.epochs:
        raise TrainingError(f"early stop t={t} outside 1..{stage1_hp.epochs}")
    stage1_ckpts = train_erm(train, stage1_hp)
    err_ids = stage1_error_ids(stage1_ckpts[t - 1], train)
    ckpts = train_upsampled(train, err_ids, lam, stage2_hp)
    return JttOutcome(
        model=ckpts[-1],
        stage1_error_ids=tuple(int(r) for r in err_ids),
        plain_erm=len(err_ids) == 0,
    )


# ----------------------------------------------------------------------------
# Grid evaluation machinery.
#
# A *task* is one stage-2 training run; a *candidate* is one task epoch.
# Tasks are deduplicated (lambda == 1 or an empty repeat set collapse to the
# plain run of their stage-2 point) and may be evaluated in parallel; the
# selection pass is a sequential reduction in canonical grid order, so the
# winners never depend on the degree of parallelism.
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class _Task:
    key: tuple
    err_pos: tuple[int, ...]  # positional indices into the training arrays
    lam: int
    stage2: HyperParams


@dataclass(frozen=True)
class _Combo:
    ref_base: CandidateRef  # epoch filled in during reduction
    task_key: tuple


@dataclass
class _Best:
    obj: float
    acc: float
    ref: CandidateRef
    task_key: tuple


_WORKER_CTX: dict | None = None


def _worker_init(ctx: dict) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _objective_value(objective: str, preds, targets, sens) -> float:
    if objective == "dp_gap":
        return dp_gap(preds, sens)
    if objective == "eo_gap":
        return eo_gap(preds, targets, sens)
    return wga(preds, targets, sens)


def _evaluate_task(ctx: dict, task: _Task) -> list[tuple[int, float, float]]:
    """Train one stage-2 run and score every epoch checkpoint on validation."""
    X, y = ctx["train_X"], ctx["train_y"]
    if task.err_pos:
        idx = np.concatenate(
            [np.arange(X.shape[0]), np.repeat(np.asarray(task.err_pos), task.lam - 1)]
        )
        X, y = X[idx], y[idx]
    ckpts = _train_loop(X, y.astype(np.float64), task.stage2)
    val_X, val_y, val_sens = ctx["val_X"], ctx["val_y"], ctx["val_sens"]
    objective = ctx["objective"]
    records = []
    for ckpt in ckpts:
        preds = predict(ckpt, val_X)
        acc = float(np.mean(preds == val_y))
        records.append((ckpt.trained_epochs, acc, _objective_value(objective, preds, val_y, val_sens)))
    return records


def _worker_run(task: _Task) -> list[tuple[int, float, float]]:
    return _evaluate_task(_WORKER_CTX, task)


def _run_tasks(ctx: dict, tasks: Sequence[_Task], jobs: int) -> dict[tuple, list]:
    if jobs <= 1 or len(tasks) <= 1:
        return {t.key: _evaluate_task(ctx, t) for t in tasks}
    with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init, initargs=(ctx,)) as pool:
        results = list(pool.map(_worker_run, tasks, chunksize=1))
    return {t.key: r for t, r in zip(tasks, results)}


def _bin_of(acc: float, bins: Sequence[tuple[float, float]]) -> int | None:
    for i, (lo, hi) in enumerate(bins):
        if lo <= acc < hi:
            return i
    return None


def _validation_sensitive(
    validation: TabularDataset,
    sensitive_source: str,
    pseudo: PseudoLabelledValidation | None,
) -> np.ndarray:
    if sensitive_source == PSEUDO:
        if pseudo is None:
            raise ValueError("sensitive_source 'pseudo' needs a PseudoLabelledValidation")
        return pseudo.aligned_to(validation)
    if validation.sensitive is None:
        raise EmptyGroupError("validation set has no ground-truth sensitive attributes")
    return validation.sensitive


def _check_objective_feasible(objective: str, targets: np.ndarray, sens: np.ndarray) -> None:
    # Group emptiness depends only on the fixed labels, not on the candidate.
    probe = np.zeros(len(targets), dtype=np.int8)
    _objective_value(objective, probe, targets, sens)


@dataclass(frozen=True)
class BinOutcome:
    bin: tuple[float, float]
    winner: CandidateRef | None
    validation: FairnessReport | None
    test: FairnessReport | None

    @property
    def empty(self) -> bool:
        return self.winner is None

    def to_dict(self) -> dict:
        return {
            "bin": list(self.bin),
            "winner": None if self.winner is None else self.winner.to_dict(),
            "validation": None if self.validation is None else self.validation.to_dict(),
            "test": None if self.test is None else self.test.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BinOutcome":
        return cls(
            bin=(float(d["bin"][0]), float(d["bin"][1])),
            winner=None if d.get("winner") is None else CandidateRef.from_dict(d["winner"]),
            validation=None if d.get("validation") is None else FairnessReport.from_dict(d["validation"]),
            test=None if d.get("test") is None else FairnessReport.from_dict(d["test"]),
        )


@dataclass(frozen=True)
class TunerResult:
    """Per-bin winners for the two-stage search, per-bin plain-training
    winners, and the unconstrained plain baseline (best validation accuracy).
    """

    objective: str
    sensitive_source: str
    bins: tuple[BinOutcome, ...]
    erm_bins: tuple[BinOutcome, ...]
    erm_baseline: BinOutcome | None

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "sensitive_source": self.sensitive_source,
            "bins": [b.to_dict() for b in self.bins],
            "erm_bins": [b.to_dict() for b in self.erm_bins],
            "erm_baseline": None if self.erm_baseline is None else self.erm_baseline.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TunerResult":
        return cls(
            objective=d["objective"],
            sensitive_source=d["sensitive_source"],
            bins=tuple(BinOutcome.from_dict(b) for b in d["bins"]),
            erm_bins=tuple(BinOutcome.from_dict(b) for b in d["erm_bins"]),
            erm_baseline=None if d.get("erm_baseline") is None else BinOutcome.from_dict(d["erm_baseline"]),
        )


def _rebuild_model(train: TabularDataset, key: tuple, epoch: int) -> ModelParams:
    """Retrain a task deterministically and return the epoch checkpoint."""
    if key[0] == "erm":
        _, hp = key
        return train_erm(train, hp)[epoch - 1]
    _, err_ids, lam, hp = key
    return train_upsampled(train, err_ids, lam, hp)[epoch - 1]


def _task_key(err_ids: tuple[int, ...], lam: int, stage2: HyperParams) -> tuple:
    if lam == 1 or not err_ids:
        return ("erm", stage2)
    return ("jtt", err_ids, lam, stage2)


def _outcome_for(
    train: TabularDataset,
    validation: TabularDataset,
    test: TabularDataset,
    best: _Best | None,
    bin_: tuple[float, float],
    val_sens: np.ndarray,
    sensitive_source: str,
    objective: str,
    model_cache: dict,
) -> BinOutcome:
    if best is None:
        return BinOutcome(bin=bin_, winner=None, validation=None, test=None)
    cache_key = (best.task_key, best.ref.epoch)
    if cache_key not in model_cache:
        model_cache[cache_key] = _rebuild_model(train, best.task_key, best.ref.epoch)
    model = model_cache[cache_key]
    val_report = report_from_predictions(
        predict(model, validation),
        validation.targets,
        val_sens,
        sensitive_source=sensitive_source,
        require=(objective,),
    )
    if test.sensitive is None:
        raise EmptyGroupError("test set has no ground-truth sensitive attributes")
    test_report = report_from_predictions(
        predict(model, test), test.targets, test.sensitive,
        sensitive_source=GROUND_TRUTH, require=(),
    )
    return BinOutcome(bin=bin_, winner=best.ref, validation=val_report, test=test_report)


def _reduce_candidates(
    combos: Sequence[_Combo],
    results: Mapping[tuple, list],
    bins: Sequence[tuple[float, float]],
    minimize: bool,
) -> tuple[list[_Best | None], _Best | None]:
    """Sequential selection in canonical order; returns per-bin bests and the
    unconstrained best-accuracy candidate."""
    best_per_bin: list[_Best | None] = [None] * len(bins)
    best_acc: _Best | None = None
    for combo in combos:
        for epoch, acc, obj in results[combo.task_key]:
            ref = CandidateRef(
                kind=combo.ref_base.kind,
                stage2=combo.ref_base.stage2,
                epoch=epoch,
                stage1=combo.ref_base.stage1,
                t=combo.ref_base.t,
                lam=combo.ref_base.lam,
                plain_fallback=combo.ref_base.plain_fallback,
            )
            if best_acc is None or acc > best_acc.acc:
                best_acc = _Best(obj=obj, acc=acc, ref=ref, task_key=combo.task_key)
            b = _bin_of(acc, bins)
            if b is None:
                continue
            cur = best_per_bin[b]
            if cur is None or (obj < cur.obj if minimize else obj > cur.obj):
                best_per_bin[b] = _Best(obj=obj, acc=acc, ref=ref, task_key=combo.task_key)
    return best_per_bin, best_acc


def grid_search(
    train: TabularDataset,
    validation: TabularDataset,
    test: TabularDataset,
    config: JttConfig,
    pseudo: PseudoLabelledValidation | None = None,
    jobs: int = 1,
) -> TunerResult:
    """Sweep the two-stage grid plus a plain baseline sweep of the stage-2
    grid, selecting per accuracy bin by the configured fairness objective."""
    val_sens = _validation_sensitive(validation, config.sensitive_source, pseudo)
    _check_objective_feasible(config.objective, validation.targets, val_sens)

    # Stage 1: one training run per grid point, reused across T values.
    stage1_errors: dict[tuple[int, int], tuple[int, ...]] = {}
    for i1, s1 in enumerate(config.stage1_grid):
        ckpts = train_erm(train, s1)
        for t in config.t_grid:
            if t > s1.epochs:
                continue
            preds = predict(ckpts[t - 1], train)
            pos = np.flatnonzero(preds != train.targets)
            stage1_errors[(i1, t)] = tuple(int(p) for p in pos)
        del ckpts

    combos: list[_Combo] = []
    tasks: dict[tuple, _Task] = {}
    for i1, s1 in enumerate(config.stage1_grid):
        for t in config.t_grid:
            if (i1, t) not in stage1_errors:
                continue
            err_pos = stage1_errors[(i1, t)]
            err_ids = tuple(int(r) for r in np.asarray(train.row_ids)[list(err_pos)]) if err_pos else ()
            for lam in config.lambda_grid:
                for s2 in config.stage2_grid:
                    key = _task_key(err_ids, lam, s2)
                    if key not in tasks:
                        tasks[key] = _Task(
                            key=key,
                            err_pos=() if key[0] == "erm" else err_pos,
                            lam=1 if key[0] == "erm" else lam,
                            stage2=s2,
                        )
                    combos.append(
                        _Combo(
                            ref_base=CandidateRef(
                                kind="jtt",
                                stage2=s2,
                                epoch=0,
                                stage1=s1,
                                t=t,
                                lam=lam,
                                plain_fallback=not err_ids,
                            ),
                            task_key=key,
                        )
                    )

    erm_combos: list[_Combo] = []
    for s2 in config.stage2_grid:
        key = ("erm", s2)
        if key not in tasks:
            tasks[key] = _Task(key=key, err_pos=(), lam=1, stage2=s2)
        erm_combos.append(
            _Combo(ref_base=CandidateRef(kind="erm", stage2=s2, epoch=0), task_key=key)
        )

    ctx = {
        "train_X": train.features,
        "train_y": train.targets,
        "val_X": validation.features,
        "val_y": validation.targets,
        "val_sens": val_sens,
        "objective": config.objective,
    }
    ordered_tasks = list(tasks.values())
    results = _run_tasks(ctx, ordered_tasks, jobs)

    minimize = _MINIMIZED[config.objective]
    jtt_best, _ = _reduce_candidates(combos, results, config.accuracy_bins, minimize)
    erm_best, erm_overall = _reduce_candidates(erm_combos, results, config.accuracy_bins, minimize)

    model_cache: dict = {}
    outcome = lambda best, bin_: _outcome_for(
        train, validation, test, best, bin_, val_sens,
        config.sensitive_source, config.objective, model_cache,
    )
    bins_out = tuple(outcome(b, bn) for b, bn in zip(jtt_best, config.accuracy_bins))
    erm_bins_out = tuple(outcome(b, bn) for b, bn in zip(erm_best, config.accuracy_bins))
    baseline = None
    if erm_overall is not None:
        baseline = outcome(erm_overall, (0.0, 1.0 + 1e-12))
    return TunerResult(
        objective=config.objective,
        sensitive_source=config.sensitive_source,
        bins=bins_out,
        erm_bins=erm_bins_out,
        erm_baseline=baseline,
    )


def erm_sweep(
    train: TabularDataset,
    validation: TabularDataset,
    test: TabularDataset,
    grid: Sequence[HyperParams],
    bins: Sequence[tuple[float, float]],
    objective: str,
    sensitive_source: str = GROUND_TRUTH,
    pseudo: PseudoLabelledValidation | None = None,
    jobs: int = 1,
) -> TunerResult:
    """Plain-training sweep: grid_search restricted to single-stage candidates
    (every epoch checkpoint of every grid point)."""
    if not grid:
        raise ValueError("grid must be nonempty")
    val_sens = _validation_sensitive(validation, sensitive_source, pseudo)
    _check_objective_feasible(objective, validation.targets, val_sens)
    tasks: dict[tuple, _Task] = {}
    erm_combos: list[_Combo] = []
    for hp in grid:
        key = ("erm", hp)
        if key not in tasks:
            tasks[key] = _Task(key=key, err_pos=(), lam=1, stage2=hp)
        erm_combos.append(_Combo(ref_base=CandidateRef(kind="erm", stage2=hp, epoch=0), task_key=key))
    ctx = {
        "train_X": train.features,
        "train_y": train.targets,
        "val_X": validation.features,
        "val_y": validation.targets,
        "val_sens": val_sens,
        "objective": objective,
    }
    results = _run_tasks(ctx, list(tasks.values()), jobs)
    minimize = _MINIMIZED[objective]
    bins = tuple((float(lo), float(hi)) for lo, hi in bins)
    erm_best, erm_overall = _reduce_candidates(erm_combos, results, bins, minimize)
    model_cache: dict = {}
    outcome = lambda best, bin_: _outcome_for(
        train, validation, test, best, bin_, val_sens, sensitive_source, objective, model_cache
    )
    erm_bins_out = tuple(outcome(b, bn) for b, bn in zip(erm_best, bins))
    baseline = outcome(erm_overall, (0.0, 1.0 + 1e-12)) if erm_overall is not None else None
    return TunerResult(
        objective=objective,
        sensitive_source=sensitive_source,
        bins=(),
        erm_bins=erm_bins_out,
        erm_baseline=baseline,
    )


def summarize_runs(results: Sequence[TunerResult]) -> dict:
    """Mean and population stddev of (accuracy, objective) across repeated
    single-seed runs, per bin, for multi-seed reporting."""
    if not results:
        raise ValueError("no results to summarize")
    objective = results[0].objective

    def stats(values: list[float]) -> dict:
        arr = np.asarray(values, dtype=np.float64)
        return {"mean": float(arr.mean()), "std": float(arr.std()), "n": len(values)}

    out: dict = {"objective": objective, "bins": []}
    n_bins = len(results[0].bins)
    for i in range(n_bins):
        accs, objs = [], []
        for r in results:
            b = r.bins[i]
            if b.winner is not None and b.test is not None:
                accs.append(b.test.avg_accuracy)
                value = b.test.metric(objective)
                if value is not None:
                    objs.append(value)
        entry = {"bin": list(results[0].bins[i].bin)}
        if accs:
            entry["test_accuracy"] = stats(accs)
        if objs:
            entry["test_objective"] = stats(objs)
        out["bins"].append(entry)
    return out
