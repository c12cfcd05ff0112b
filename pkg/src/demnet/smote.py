"""k-NN synthetic minority oversampling with logged interpolation witnesses.

Every class is raised to the target count (default: the largest class) by
interpolating between a class member and one of its k nearest same-class
neighbours: synth = base + lam * (neighbor - base), lam ~ U[0, 1). Original
rows are preserved verbatim as a prefix; synthetic rows follow, grouped by
ascending class id. Each synthetic row's (base, neighbor, lam) witness is
returned so the segment property can be re-checked after the fact.

Draw order is fixed for reproducibility: classes in ascending id; per class
one vectorized batch of base draws, then neighbor draws, then lambdas.
A class with a single sample cannot interpolate; it is duplicated instead
(neighbor = base, lam = 0, no draws consumed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import RngState


class SingletonClassError(ValueError):
    """A class with fewer than 2 samples has no neighbours."""


@dataclass(frozen=True)
class FeatureMatrix:
    """Flattened sample rows with a parallel integer label vector."""
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {self.x.shape}")
        if self.y.ndim != 1 or len(self.y) != len(self.x):
            raise ValueError(
                f"label vector shape {self.y.shape} does not match {len(self.x)} rows")
        if len(self.x) == 0:
            raise ValueError("feature matrix is empty")
        if self.y.min() < 0:
            raise ValueError("labels must be non-negative")


@dataclass(frozen=True)
class SmoteConfig:
    k: int = 5
    target: int | None = None
    seed: int = 42

    def validate(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.target is not None and self.target < 1:
            raise ValueError(f"target must be >= 1, got {self.target}")


@dataclass(frozen=True)
class SmoteWitness:
    """Provenance of one synthetic row; base/neighbor index the input rows."""
    class_id: int
    base: int
    neighbor: int
    lam: float


@dataclass
class SmoteResult:
    x: np.ndarray
    y: np.ndarray
    witnesses: list[SmoteWitness]
    counts_before: dict[int, int]
    counts_after: dict[int, int]


def _pairwise_sq_dists(rows: np.ndarray) -> np.ndarray:
    # |a-b|^2 via the norm expansion; cheaper than materialising differences
    # for thousands of rows, and exact for the small-integer fixtures used
    # to pin the tie rule.
    r = rows.astype(np.float64)
    sq = np.einsum("ij,ij->i", r, r)
    d = sq[:, None] + sq[None, :] - 2.0 * (r @ r.T)
    np.maximum(d, 0.0, out=d)
    return d


def knn_within_class(matrix: FeatureMatrix, class_id: int, k: int):
    """Global row indices of class members and, per member, its k nearest
    same-class neighbours (Euclidean; ties to the lower row index; k clamped
    to class size - 1). Raises SingletonClassError below 2 samples."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rows = np.flatnonzero(matrix.y == class_id)
    n = len(rows)
    if n < 2:
        raise SingletonClassError(
            f"class {class_id} has {n} sample(s); no neighbours exist")
    k_eff = min(k, n - 1)
    d = _pairwise_sq_dists(matrix.x[rows])
    np.fill_diagonal(d, np.inf)
    # stable sort keeps equal distances in ascending subset order, which is
    # ascending global order because `rows` is sorted
    order = np.argsort(d, axis=1, kind="stable")[:, :k_eff]
    return rows, rows[order]


def smote_balance(matrix: FeatureMatrix, cfg: SmoteConfig | None = None) -> SmoteResult:
    """Balance every class up to the target count by segment interpolation."""
    cfg = cfg or SmoteConfig()
    cfg.validate()
    class_ids = np.unique(matrix.y)
    counts = {int(c): int((matrix.y == c).sum()) for c in class_ids}
    target = cfg.target if cfg.target is not None else max(counts.values())
    over = {c: n for c, n in counts.items() if n > target}
    if over:
        raise ValueError(
            f"target {target} is below existing class counts {over}")

    rng = RngState(cfg.seed)
    new_rows = []
    new_labels = []
    witnesses: list[SmoteWitness] = []
    for c in class_ids:
        need = target - counts[int(c)]
        if need == 0:
            continue
        rows = np.flatnonzero(matrix.y == c)
        if len(rows) == 1:
            base = int(rows[0])
            witnesses.extend(SmoteWitness(int(c), base, base, 0.0)
                             for _ in range(need))
            new_rows.append(np.repeat(matrix.x[rows], need, axis=0))
            new_labels.append(np.full(need, c, dtype=matrix.y.dtype))
            continue
        rows, neighbors = knn_within_class(matrix, int(c), cfg.k)
        k_eff = neighbors.shape[1]
        base_pos = rng.integers_below(len(rows), need)
        nb_pos = rng.integers_below(k_eff, need)
        lams = rng.uniform(need)
        base_idx = rows[base_pos]
        nb_idx = neighbors[base_pos, nb_pos]
        base = matrix.x[base_idx]
        synth = base + lams[:, None] * (matrix.x[nb_idx] - base)
        new_rows.append(synth.astype(matrix.x.dtype, copy=False))
        new_labels.append(np.full(need, c, dtype=matrix.y.dtype))
        witnesses.extend(
            SmoteWitness(int(c), int(b), int(nb), float(l))
            for b, nb, l in zip(base_idx, nb_idx, lams))

    if new_rows:
        x = np.concatenate([matrix.x] + new_rows, axis=0)
        y = np.concatenate([matrix.y] + new_labels, axis=0)
    else:
        x, y = matrix.x.copy(), matrix.y.copy()
    counts_after = {int(c): int((y == c).sum()) for c in class_ids}
    return SmoteResult(x=x, y=y, witnesses=witnesses,
                       counts_before=counts, counts_after=counts_after)


def replicate_balance(matrix: FeatureMatrix, cfg: SmoteConfig | None = None) -> SmoteResult:
    """Naive fallback: balance by duplicating uniformly drawn class members
    verbatim instead of interpolating."""
    cfg = cfg or SmoteConfig()
    cfg.validate()
    class_ids = np.unique(matrix.y)
    counts = {int(c): int((matrix.y == c).sum()) for c in class_ids}
    target = cfg.target if cfg.target is not None else max(counts.values())
    over = {c: n for c, n in counts.items() if n > target}
    if over:
        raise ValueError(f"target {target} is below existing class counts {over}")

    rng = RngState(cfg.seed)
    new_rows = []
    new_labels = []
    witnesses: list[SmoteWitness] = []
    for c in class_ids:
        need = target - counts[int(c)]
        if need == 0:
            continue
        rows = np.flatnonzero(matrix.y == c)
        base_idx = rows[rng.integers_below(len(rows), need)]
        new_rows.append(matrix.x[base_idx])
        new_labels.append(np.full(need, c, dtype=matrix.y.dtype))
        witnesses.extend(SmoteWitness(int(c), int(b), int(b), 0.0) for b in base_idx)

    if new_rows:
        x = np.concatenate([matrix.x] + new_rows, axis=0)
        y = np.concatenate([matrix.y] + new_labels, axis=0)
    else:
        x, y = matrix.x.copy(), matrix.y.copy()
    counts_after = {int(c): int((y == c).sum()) for c in class_ids}
    return SmoteResult(x=x, y=y, witnesses=witnesses,
                       counts_before=counts, counts_after=counts_after)


def check_witnesses(matrix: FeatureMatrix, result: SmoteResult,
                    tol: float = 1e-6) -> float:
    """Max per-component residual of synth - (base + lam*(neighbor - base))
    over all synthetic rows; raises if any exceeds tol."""
    n_orig = len(matrix.x)
    worst = 0.0
    for i, w in enumerate(result.witnesses):
        base = matrix.x[w.base].astype(np.float64)
        nb = matrix.x[w.neighbor].astype(np.float64)
        expect = base + w.lam * (nb - base)
        got = result.x[n_orig + i].astype(np.float64)
        resid = float(np.abs(got - expect).max())
        worst = max(worst, resid)
        if resid > tol:
            raise AssertionError(
                f"synthetic row {n_orig + i} off its witness segment by {resid}")
    return worst
