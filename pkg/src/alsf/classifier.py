"""Solver-free patch classification and image-level decision rules.

A patch is labeled by the smallest class reconstruction residual after the
analysis operators produce codes in closed form; whole images aggregate the
per-patch labels over a non-overlapping grid with either a positive-ratio
score or a largest-connected-region score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import DegenerateLabels, EmptyGrid, ShapeMismatch
from .model import RESIDUAL_MODES, AlsfModel

RULE_KINDS = ("ratio", "connected-region")


@dataclass(frozen=True)
class PatchGrid:
    """Per-patch labels and residual margins on a rows x cols grid, row-major.

    scores[i, j] is the runner-up residual minus the winning residual for
    that cell (0.0 when the model has a single class).
    """

    labels: np.ndarray  # (rows, cols) int
    scores: np.ndarray  # (rows, cols) float margins
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise EmptyGrid(f"grid {self.rows}x{self.cols} has no cells")
        shape = (self.rows, self.cols)
        if np.asarray(self.labels).shape != shape:
            raise ShapeMismatch(f"labels shape != {shape}")
        if np.asarray(self.scores).shape != shape:
            raise ShapeMismatch(f"scores shape != {shape}")
        if np.asarray(self.labels).min() < 0:
            raise ValueError("labels must be class indices")

    @property
    def size(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class DecisionRule:
    """Learned image-level rule: positive when score > threshold (strict).

    kind "ratio" thresholds the positive-patch fraction; "connected-region"
    thresholds the largest 8-connected positive-region size in patch counts.
    Thresholds may be -inf/+inf (always/never positive); finite ratio
    thresholds live in [0, 1], finite region thresholds are >= 0 (candidate
    sweeps land on half-integers between region sizes).
    """

    kind: str
    positive_class: int
    threshold: float

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"rule kind must be one of {RULE_KINDS}")
        if self.positive_class < 0:
            raise ValueError("positive_class must be a class index")
        t = self.threshold
        if np.isnan(t):
            raise ValueError("threshold must not be NaN")
        if np.isfinite(t):
            if self.kind == "ratio" and not 0.0 <= t <= 1.0:
                raise ValueError(f"ratio threshold {t} outside [0, 1]")
            if self.kind == "connected-region" and t < 0.0:
                raise ValueError(f"region threshold {t} negative")


@dataclass(frozen=True)
class ImageDecision:
    score: float
    positive: bool
    grid: PatchGrid


def _residual_matrix(patches: np.ndarray, model: AlsfModel, mode: str) -> np.ndarray:
    """(n_patches, n_classes) squared residuals, vectorized over the batch."""
    if mode not in RESIDUAL_MODES:
        raise ValueError(f"mode must be one of {RESIDUAL_MODES}")
    Y = np.ascontiguousarray(np.asarray(patches, dtype=np.float64).T)  # d x n
    if Y.shape[0] != model.d:
        raise ShapeMismatch(
            f"patches have dimension {Y.shape[0]}, model expects {model.d}")
    shared_part = 0.0
    if mode == "shared-subtracted" and model.k_shared:
        shared_part = model.shared_dict @ (model.shared_analysis @ Y)
    out = np.empty((Y.shape[1], model.num_classes))
    for c in range(model.num_classes):
        R = Y - model.class_dicts[c] @ (model.class_analysis[c] @ Y) - shared_part
        out[:, c] = np.sum(R * R, axis=0)
    return out


def _labels_and_margins(res: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels = np.argmin(res, axis=1)
    if res.shape[1] == 1:
        return labels, np.zeros(res.shape[0])
    low2 = np.partition(res, 1, axis=1)[:, :2]
    return labels, low2[:, 1] - low2[:, 0]


def classify_patch(y: np.ndarray, model: AlsfModel,
                   mode: str = "shared-subtracted") -> int:
    """Class index with the smallest reconstruction residual.

    Ties go to the lowest class index (np.argmin's first-minimum contract).
    No iterative optimization: two matrix-vector products per class.
    """
    res = _residual_matrix(np.asarray(y, dtype=np.float64).reshape(1, -1), model, mode)
    return int(np.argmin(res[0]))


def predict_classes(patches: np.ndarray, model: AlsfModel,
                    mode: str = "shared-subtracted") -> np.ndarray:
    """Argmin-residual labels for an (n_patches, d) batch."""
    return np.argmin(_residual_matrix(patches, model, mode), axis=1)


def classify_grid(patches: np.ndarray, rows: int, cols: int, model: AlsfModel,
                  mode: str = "shared-subtracted") -> PatchGrid:
    """Label a row-major (rows*cols, d) patch batch as a PatchGrid."""
    if rows <= 0 or cols <= 0:
        raise EmptyGrid(f"grid {rows}x{cols} has no cells")
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape[0] != rows * cols:
        raise ShapeMismatch(
            f"{patches.shape[0]} patches cannot fill a {rows}x{cols} grid")
    labels, margins = _labels_and_margins(_residual_matrix(patches, model, mode))
    return PatchGrid(labels=labels.reshape(rows, cols),
                     scores=margins.reshape(rows, cols), rows=rows, cols=cols)


def score_ratio(grid: PatchGrid, positive_class: int) -> float:
    """Fraction of grid cells labeled with the positive class."""
    return float(np.count_nonzero(grid.labels == positive_class)) / grid.size


def score_largest_region(grid: PatchGrid, positive_class: int) -> float:
    """Patch count of the largest 8-connected positive region (0.0 if none)."""
    mask = grid.labels == positive_class
    if not mask.any():
        return 0.0
    labeled, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    counts = np.bincount(labeled.ravel())[1:n + 1]
    return float(counts.max())


def image_score(grid: PatchGrid, rule: DecisionRule) -> float:
    if rule.kind == "ratio":
        return score_ratio(grid, rule.positive_class)
    return score_largest_region(grid, rule.positive_class)


def decide_image(grid: PatchGrid, rule: DecisionRule) -> ImageDecision:
    """Apply a learned rule to a labeled grid; positive iff score > threshold."""
    s = image_score(grid, rule)
    return ImageDecision(score=s, positive=bool(s > rule.threshold), grid=grid)


def balanced_accuracy(scores: np.ndarray, is_positive: np.ndarray,
                      threshold: float) -> float:
    """Mean of the two per-label accuracies under `score > threshold`."""
    pred = np.asarray(scores) > threshold
    pos = np.asarray(is_positive, dtype=bool)
    tpr = float(np.mean(pred[pos])) if pos.any() else 0.0
    tnr = float(np.mean(~pred[~pos])) if (~pos).any() else 0.0
    return 0.5 * (tpr + tnr)


def learn_threshold(scores: np.ndarray, is_positive: np.ndarray) -> float:
    """Balanced-accuracy-maximizing threshold for the rule `score > t`.

    Candidates are midpoints of consecutive distinct sorted scores plus
    sentinels below the minimum (-inf: everything positive) and above the
    maximum (+inf: nothing positive). Ties prefer the smallest candidate.
    Needs at least one score per label.
    """
    scores = np.asarray(scores, dtype=np.float64)
    is_positive = np.asarray(is_positive, dtype=bool)
    if scores.shape != is_positive.shape or scores.ndim != 1:
        raise ShapeMismatch("scores and labels must be equal-length vectors")
    if not is_positive.any() or is_positive.all():
        raise DegenerateLabels("threshold learning needs both labels present")

    uniq = np.unique(scores)
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    candidates = np.concatenate(([-np.inf], mids, [np.inf]))
    accs = [balanced_accuracy(scores, is_positive, t) for t in candidates]
    return float(candidates[int(np.argmax(accs))])  # first max = smallest t
