"""Mutually contaminated group-noise laboratory.

Noisy groups are mixtures of the true sensitive-attribute groups: a fraction
alpha of the noisy majority is drawn from the true minority and a fraction
beta of the noisy minority from the true majority. Group-fairness gaps
measured under such noise shrink by the factor 1 - alpha - beta, and the
distance between the noisy group means shrinks by |1 - alpha - beta|; this
module checks both facts numerically, with an exact path on population
quantities (no sampling) and a Monte-Carlo path on drawn rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .labelling import edm
from .metrics import EmptyGroupError
from .training import ModelParams, predict

RATIO_DENOM_FLOOR = 1e-6


def _check_rate(value: float, what: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{what} must lie in [0, 1], got {value}")
    return value


@dataclass(frozen=True)
class NoiseSpec:
    """Contamination rates, optionally per target class, plus the draw seed."""

    alpha: float
    beta: float
    seed: int = 0
    alpha_0: float | None = None
    beta_0: float | None = None
    alpha_1: float | None = None
    beta_1: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", _check_rate(self.alpha, "alpha"))
        object.__setattr__(self, "beta", _check_rate(self.beta, "beta"))
        for name in ("alpha_0", "beta_0", "alpha_1", "beta_1"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _check_rate(v, name))

    def class_rates(self, y: int) -> tuple[float, float]:
        """(alpha, beta) for target class y, falling back to the global rates."""
        a = getattr(self, f"alpha_{y}")
        b = getattr(self, f"beta_{y}")
        return (self.alpha if a is None else a, self.beta if b is None else b)


@dataclass(frozen=True)
class MixedGroups:
    """Drawn noisy groups with full provenance.

    *_from_majority is True where the drawn row came from the true majority;
    *_source_index is the row's index within its source group.
    """

    majority: np.ndarray
    minority: np.ndarray
    majority_from_majority: np.ndarray
    minority_from_majority: np.ndarray
    majority_source_index: np.ndarray
    minority_source_index: np.ndarray


def _draw(
    majority_rows: np.ndarray,
    minority_rows: np.ndarray,
    contamination: float,
    n: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    from_major = rng.random(n) >= contamination
    idx_major = rng.integers(0, majority_rows.shape[0], n)
    idx_minor = rng.integers(0, minority_rows.shape[0], n)
    src_idx = np.where(from_major, idx_major, idx_minor)
    rows = np.where(from_major[:, None], majority_rows[idx_major], minority_rows[idx_minor])
    return rows, from_major, src_idx


def mix_groups(
    majority_rows: np.ndarray,
    minority_rows: np.ndarray,
    spec: NoiseSpec,
    n_out: tuple[int, int],
    rng: np.random.Generator | None = None,
) -> MixedGroups:
    """Draw noisy groups with replacement from the true groups.

    Each noisy-majority row comes from the true majority with probability
    1 - alpha, else from the minority; the noisy minority uses beta
    symmetrically.
    """
    majority_rows = np.asarray(majority_rows, dtype=np.float64)
    minority_rows = np.asarray(minority_rows, dtype=np.float64)
    if majority_rows.shape[0] == 0 or minority_rows.shape[0] == 0:
        raise EmptyGroupError("source groups must be nonempty")
    n_maj, n_min = int(n_out[0]), int(n_out[1])
    if n_maj < 1 or n_min < 1:
        raise ValueError("n_out sizes must be >= 1")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    (maj_rows, maj_from_major, maj_src), (min_rows, min_from_major, min_src) = _mix_with_payload(
        majority_rows, minority_rows, spec.alpha, spec.beta, (n_maj, n_min), rng
    )
    return MixedGroups(
        majority=maj_rows,
        minority=min_rows,
        majority_from_majority=maj_from_major,
        minority_from_majority=min_from_major,
        majority_source_index=maj_src,
        minority_source_index=min_src,
    )


def _mix_with_payload(
    majority_rows: np.ndarray,
    minority_rows: np.ndarray,
    alpha: float,
    beta: float,
    n_out: tuple[int, int],
    rng: np.random.Generator,
) -> tuple[tuple[np.ndarray, np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Internal draw returning (rows, from_majority, source_index) per group."""
    maj = _draw(majority_rows, minority_rows, alpha, n_out[0], rng)
    min_rows, min_from_minor, min_src = _draw(minority_rows, majority_rows, beta, n_out[1], rng)
    return maj, (min_rows, ~min_from_minor, min_src)


@dataclass(frozen=True)
class ClassContamination:
    alpha_hat: float
    beta_hat: float

    @property
    def one_minus_sum(self) -> float:
        return 1.0 - self.alpha_hat - self.beta_hat


@dataclass(frozen=True)
class ContaminationEstimate:
    by_class: Mapping[int, ClassContamination]


def estimate_contamination(pseudo, truth, targets) -> ContaminationEstimate:
    """Estimate (alpha, beta) of pseudo labels per target class.

    alpha_hat: fraction of rows labelled majority whose ground truth is
    minority; beta_hat symmetric.
    """
    ps = np.asarray(pseudo)
    tr = np.asarray(truth)
    targ = np.asarray(targets)
    if not (len(ps) == len(tr) == len(targ)):
        raise ValueError("pseudo, truth and targets must align")
    by_class: dict[int, ClassContamination] = {}
    for y in (0, 1):
        in_class = targ == y
        if not in_class.any():
            continue
        labelled_maj = in_class & (ps == 1)
        labelled_min = in_class & (ps == 0)
        if not labelled_maj.any():
            raise EmptyGroupError(f"no rows labelled majority within target class {y}")
        if not labelled_min.any():
            raise EmptyGroupError(f"no rows labelled minority within target class {y}")
        alpha_hat = float(np.mean(tr[labelled_maj] == 0))
        beta_hat = float(np.mean(tr[labelled_min] == 1))
        by_class[y] = ClassContamination(alpha_hat=alpha_hat, beta_hat=beta_hat)
    return ContaminationEstimate(by_class=by_class)


def estimate_contamination_pooled(pseudo, truth) -> ClassContamination:
    """Contamination estimate ignoring target classes."""
    ps = np.asarray(pseudo)
    tr = np.asarray(truth)
    if not (ps == 1).any() or not (ps == 0).any():
        raise EmptyGroupError("both pseudo groups must be nonempty")
    return ClassContamination(
        alpha_hat=float(np.mean(tr[ps == 1] == 0)),
        beta_hat=float(np.mean(tr[ps == 0] == 1)),
    )


# ----------------------------------------------------------------------------
# Population-exact path: identities on analytic mixture quantities.
# ----------------------------------------------------------------------------

def noisy_means_exact(
    mean_majority: np.ndarray, mean_minority: np.ndarray, alpha: float, beta: float
) -> tuple[np.ndarray, np.ndarray]:
    """Exact noisy group means under the mixture model (no sampling)."""
    mu1 = np.asarray(mean_majority, dtype=np.float64)
    mu0 = np.asarray(mean_minority, dtype=np.float64)
    return (1.0 - alpha) * mu1 + alpha * mu0, beta * mu1 + (1.0 - beta) * mu0


def edm_exact(
    mean_majority: np.ndarray, mean_minority: np.ndarray, alpha: float, beta: float
) -> tuple[float, float]:
    """(clean EDM, noisy EDM) computed from exact mixture means."""
    mu1 = np.asarray(mean_majority, dtype=np.float64)
    mu0 = np.asarray(mean_minority, dtype=np.float64)
    noisy_maj, noisy_min = noisy_means_exact(mu1, mu0, alpha, beta)
    return float(np.linalg.norm(mu1 - mu0)), float(np.linalg.norm(noisy_maj - noisy_min))


def dp_gap_noisy_exact(
    rate_majority: float, rate_minority: float, alpha: float, beta: float
) -> float:
    """Signed DP gap measured on exact noisy groups, given the true
    group-conditional positive-prediction rates."""
    noisy_major_rate = (1.0 - alpha) * rate_majority + alpha * rate_minority
    noisy_minor_rate = beta * rate_majority + (1.0 - beta) * rate_minority
    return noisy_major_rate - noisy_minor_rate


# ----------------------------------------------------------------------------
# Sampled path: Monte-Carlo verification records.
# ----------------------------------------------------------------------------

def _ratio(noisy: float, true: float) -> float | None:
    if abs(true) <= RATIO_DENOM_FLOOR:
        return None
    return noisy / true


def _gather(from_majority: np.ndarray, src: np.ndarray, majority_payload: np.ndarray, minority_payload: np.ndarray) -> np.ndarray:
    """Per-row payload of drawn rows; src indexes into each row's own source."""
    out = np.empty(len(src), dtype=np.float64)
    out[from_majority] = majority_payload[src[from_majority]]
    out[~from_majority] = minority_payload[src[~from_majority]]
    return out


@dataclass(frozen=True)
class ProportionalityRecord:
    alpha: float
    beta: float
    alpha_1: float
    beta_1: float
    dp_true: float
    dp_noisy: float
    eo_true: float
    eo_noisy: float
    ratio_dp: float | None
    ratio_eo: float | None


def verify_proportionality(
    classifier: ModelParams,
    majority: tuple[np.ndarray, np.ndarray],
    minority: tuple[np.ndarray, np.ndarray],
    spec: NoiseSpec,
    n_samples: int,
) -> ProportionalityRecord:
    """Measure signed DP/EO gaps on drawn noisy groups against the clean gaps.

    DP uses the global (alpha, beta); the EO measurement, which conditions on
    target 1, mixes the positive-class rows with the class-1 rates (equal to
    the global ones unless ``spec`` overrides them).
    """
    X_maj, y_maj = np.asarray(majority[0], dtype=np.float64), np.asarray(majority[1])
    X_min, y_min = np.asarray(minority[0], dtype=np.float64), np.asarray(minority[1])
    if X_maj.shape[0] == 0 or X_min.shape[0] == 0:
        raise EmptyGroupError("source groups must be nonempty")
    pred_maj = predict(classifier, X_maj).astype(np.float64)
    pred_min = predict(classifier, X_min).astype(np.float64)
    dp_true = float(pred_maj.mean() - pred_min.mean())

    rng = np.random.default_rng(spec.seed)
    (maj_rows, maj_from_major, maj_src), (min_rows, min_from_major, min_src) = _mix_with_payload(
        X_maj, X_min, spec.alpha, spec.beta, (n_samples, n_samples), rng
    )
    noisy_maj_pred = _gather(maj_from_major, maj_src, pred_maj, pred_min)
    noisy_min_pred = _gather(min_from_major, min_src, pred_maj, pred_min)
    dp_noisy = float(noisy_maj_pred.mean() - noisy_min_pred.mean())

    # EO: restrict the sources to target 1, then mix with the class-1 rates.
    alpha_1, beta_1 = spec.class_rates(1)
    pos_maj = np.flatnonzero(y_maj == 1)
    pos_min = np.flatnonzero(y_min == 1)
    if len(pos_maj) == 0 or len(pos_min) == 0:
        raise EmptyGroupError("both groups need rows with target 1 for the EO check")
    tpr_maj = pred_maj[pos_maj]
    tpr_min = pred_min[pos_min]
    eo_true = float(tpr_maj.mean() - tpr_min.mean())
    (_, emaj_from_major, emaj_src), (_, emin_from_major, emin_src) = _mix_with_payload(
        X_maj[pos_maj], X_min[pos_min], alpha_1, beta_1, (n_samples, n_samples), rng
    )
    noisy_tpr_maj = _gather(emaj_from_major, emaj_src, tpr_maj, tpr_min)
    noisy_tpr_min = _gather(emin_from_major, emin_src, tpr_maj, tpr_min)
    eo_noisy = float(noisy_tpr_maj.mean() - noisy_tpr_min.mean())

    return ProportionalityRecord(
        alpha=spec.alpha,
        beta=spec.beta,
        alpha_1=alpha_1,
        beta_1=beta_1,
        dp_true=dp_true,
        dp_noisy=dp_noisy,
        eo_true=eo_true,
        eo_noisy=eo_noisy,
        ratio_dp=_ratio(dp_noisy, dp_true),
        ratio_eo=_ratio(eo_noisy, eo_true),
    )


@dataclass(frozen=True)
class EdmSweepRecord:
    alpha: float
    beta: float
    edm_true: float
    edm_noisy: float
    ratio: float | None


def verify_edm_lemma(
    majority_rows: np.ndarray,
    minority_rows: np.ndarray,
    spec_grid: Sequence[tuple[float, float]],
    n_samples: int,
    seed: int = 0,
    check_tol: float | None = None,
) -> list[EdmSweepRecord]:
    """Sample noisy groups per (alpha, beta) and compare the noisy EDM with
    the clean EDM. Each grid cell draws from its own child seed, so cells are
    independent and the sweep is reproducible.

    With check_tol set, raises if any ratio strays more than check_tol from
    |1 - alpha - beta|.
    """
    X_maj = np.asarray(majority_rows, dtype=np.float64)
    X_min = np.asarray(minority_rows, dtype=np.float64)
    edm_true = edm(X_maj, X_min)
    if edm_true <= 1e-9:
        raise ValueError("clean group means coincide; the EDM ratio is undefined")
    records: list[EdmSweepRecord] = []
    for i, (alpha, beta) in enumerate(spec_grid):
        cell = NoiseSpec(alpha=alpha, beta=beta)
        rng = np.random.default_rng([seed, i])
        (maj_rows, _, _), (min_rows, _, _) = _mix_with_payload(
            X_maj, X_min, cell.alpha, cell.beta, (n_samples, n_samples), rng
        )
        edm_noisy = edm(maj_rows, min_rows)
        ratio = _ratio(edm_noisy, edm_true)
        if check_tol is not None and ratio is not None and abs(ratio - abs(1.0 - alpha - beta)) > check_tol:
            raise AssertionError(
                f"EDM ratio {ratio:.4f} at (alpha={alpha}, beta={beta}) "
                f"deviates from |1-alpha-beta|={abs(1 - alpha - beta):.4f} by more than {check_tol}"
            )
        records.append(
            EdmSweepRecord(alpha=alpha, beta=beta, edm_true=edm_true, edm_noisy=edm_noisy, ratio=ratio)
        )
    return records


def difference_of_means_probe(majority_rows: np.ndarray, minority_rows: np.ndarray) -> ModelParams:
    """Fixed linear classifier along the difference of the group means.

    A deterministic probe for proportionality sweeps: predicts 1 on the
    majority side of the midpoint hyperplane.
    """
    from .training import HyperParams  # local import to avoid cycle noise

    mu1 = np.asarray(majority_rows, dtype=np.float64).mean(axis=0)
    mu0 = np.asarray(minority_rows, dtype=np.float64).mean(axis=0)
    w = mu1 - mu0
    b = -float(w @ (mu1 + mu0) / 2.0)
    return ModelParams(
        tensors=(w, np.asarray(b)),
        hidden_units=0,
        feature_dim=w.shape[0],
        trained_epochs=0,
        hp=HyperParams(learning_rate=1.0, epochs=1),
    )


_SWEEP_COLUMNS = (
    "alpha",
    "beta",
    "edm_true",
    "edm_noisy",
    "edm_ratio",
    "dp_true",
    "dp_noisy",
    "dp_ratio",
    "eo_true",
    "eo_noisy",
    "eo_ratio",
)


def write_sweep_csv(
    path: str | Path,
    edm_records: Sequence[EdmSweepRecord],
    dp_records: Sequence[ProportionalityRecord] | None = None,
    meta: Mapping[str, str] | None = None,
) -> None:
    """Emit one CSV row per grid cell for external plotting."""
    dp_by_cell = {}
    if dp_records:
        dp_by_cell = {(r.alpha, r.beta): r for r in dp_records}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if meta:
            for key in sorted(meta):
                fh.write(f"#{key}={meta[key]}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_SWEEP_COLUMNS)
        for rec in edm_records:
            dp = dp_by_cell.get((rec.alpha, rec.beta))
            row = [
                repr(rec.alpha),
                repr(rec.beta),
                repr(rec.edm_true),
                repr(rec.edm_noisy),
                "" if rec.ratio is None else repr(rec.ratio),
            ]
            if dp is None:
                row.extend([""] * 6)
            else:
                row.extend(
                    [
                        repr(dp.dp_true),
                        repr(dp.dp_noisy),
                        "" if dp.ratio_dp is None else repr(dp.ratio_dp),
                        repr(dp.eo_true),
                        repr(dp.eo_noisy),
                        "" if dp.ratio_eo is None else repr(dp.ratio_eo),
                    ]
                )
            writer.writerow(row)
