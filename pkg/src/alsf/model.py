"""Domain types and objective evaluation for the joint analysis-synthesis model.

A fitted model holds, for each class c, a synthesis dictionary D_c (its
"classifier" role) and an analysis operator A_c (its "feature extractor"
role), plus a low-rank shared dictionary D_0 and shared analysis operator
A_0 capturing structure common to all classes. k_shared = 0 switches the
shared blocks off, which recovers the basic joint model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import numerics
from .exceptions import DimensionMismatch

RESIDUAL_MODES = ("shared-subtracted", "plain")


@dataclass
class Hyperparams:
    """Scalar weights and iteration controls for training.

    The weight defaults are starting grid centers to be tuned by
    cross-validation; k_per_class and k_shared must be chosen per dataset.
    """

    k_per_class: int
    k_shared: int
    eta: float = 0.1          # nuclear-norm weight on the shared dictionary
    eta1: float = 1e-3        # ridge on the class analysis operators
    tau: float = 1.0          # analysis-vs-synthesis balance
    lambda1: float = 1e-2     # shared-operator mean-anchoring weight
    lambda2: float = 1e-2     # class code-consistency weight
    lambda3: float = 1e-2     # shared code-consistency weight
    max_iters: int = 30
    rel_tol: float = 1e-4
    code_sweeps: int = 1      # inner code alternations per outer iteration
    ridge_a0: float = 1e-6    # conditioning ridge for the shared operator
    seed: int = 0
    joint_code_solve: bool = False  # exact coupled code solve instead of sweeps

    def __post_init__(self):
        for name in ("eta", "eta1", "tau", "lambda1", "lambda2", "lambda3", "ridge_a0"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.k_per_class < 1:
            raise ValueError("k_per_class must be >= 1")
        if self.k_shared < 0:
            raise ValueError("k_shared must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (np.isfinite(self.rel_tol) and self.rel_tol > 0):
            raise ValueError("rel_tol must be > 0")
        if self.code_sweeps < 1:
            raise ValueError("code_sweeps must be >= 1")

    def with_(self, **kw) -> "Hyperparams":
        """Copy with the given fields replaced (convenience for grids)."""
        return replace(self, **kw)


@dataclass
class TrainingSet:
    """Per-class data matrices plus the global column-mean template.

    per_class[c] is d x N_c with one vectorized patch per column.
    mean_template is the length-d vector replicated to build the mean
    matrix that anchors the shared analysis operator.
    """

    per_class: list[np.ndarray]
    mean_template: np.ndarray | None = None

    def __post_init__(self):
        if not self.per_class:
            raise DimensionMismatch("need at least one class")
        self.per_class = [numerics.require_finite(Y, f"class {c} data")
                          for c, Y in enumerate(self.per_class)]
        d = self.per_class[0].shape[0]
        for c, Y in enumerate(self.per_class):
            if Y.ndim != 2 or Y.shape[0] != d:
                raise DimensionMismatch(f"class {c} data must be 2-D with {d} rows")
            if Y.shape[1] < 1:
                raise DimensionMismatch(f"class {c} has no samples")
        if self.mean_template is None:
            self.mean_template = np.hstack(self.per_class).mean(axis=1)
        else:
            self.mean_template = numerics.require_finite(self.mean_template, "mean_template")
            if self.mean_template.shape != (d,):
                raise DimensionMismatch("mean_template length must equal the feature dim")

    @property
    def d(self) -> int:
        return self.per_class[0].shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.per_class)

    @property
    def class_counts(self) -> list[int]:
        return [Y.shape[1] for Y in self.per_class]

    def complement(self, c: int) -> np.ndarray:
        """All columns not belonging to class c (d x N_cbar; zero columns if C = 1)."""
        others = [Y for i, Y in enumerate(self.per_class) if i != c]
        if not others:
            return np.zeros((self.d, 0))
        return np.hstack(others)

    def mean_matrix(self, n_cols: int) -> np.ndarray:
        """Mean template replicated into n_cols columns."""
        return np.repeat(self.mean_template[:, None], n_cols, axis=1)


@dataclass
class AlsfModel:
    """Learned dictionaries and analysis operators.

    class_dicts[c]:   d x k_c synthesis dictionary for class c
    class_analysis[c]: k_c x d analysis operator for class c
    shared_dict:      d x k_0 (k_0 = 0 means no shared blocks)
    shared_analysis:  k_0 x d
    """

    class_dicts: list[np.ndarray]
    shared_dict: np.ndarray
    class_analysis: list[np.ndarray]
    shared_analysis: np.ndarray
    labels: list[str] | None = None

    def __post_init__(self):
        if self.labels is None:
            self.labels = [f"class_{c}" for c in range(len(self.class_dicts))]
        d = self.class_dicts[0].shape[0] if self.class_dicts else 0
        if np.asarray(self.shared_dict).size == 0:
            # Normalize the no-shared-blocks case so stacking always works.
            self.shared_dict = np.zeros((d, 0))
            self.shared_analysis = np.zeros((0, d))
        self.validate()

    def validate(self) -> None:
        C = len(self.class_dicts)
        if C < 1 or len(self.class_analysis) != C or len(self.labels) != C:
            raise DimensionMismatch("class block lists are inconsistent")
        d = self.class_dicts[0].shape[0]
        for c in range(C):
            D, A = self.class_dicts[c], self.class_analysis[c]
            numerics.require_finite(D, f"class dict {c}")
            numerics.require_finite(A, f"class analysis {c}")
            if D.shape[0] != d or D.shape[1] < 1:
                raise DimensionMismatch(f"class dict {c} must be {d} x k with k >= 1")
            if A.shape != (D.shape[1], d):
                raise DimensionMismatch(f"class analysis {c} shape mismatch")
        numerics.require_finite(self.shared_dict, "shared dict")
        numerics.require_finite(self.shared_analysis, "shared analysis")
        if self.shared_dict.ndim != 2 or self.shared_dict.shape[0] != d:
            raise DimensionMismatch("shared dict row count mismatch")
        if self.shared_analysis.shape != (self.shared_dict.shape[1], d):
            raise DimensionMismatch("shared analysis shape mismatch")
        for name, D in [("shared dict", self.shared_dict)] + [
            (f"class dict {c}", D) for c, D in enumerate(self.class_dicts)
        ]:
            if D.size and np.linalg.norm(D, axis=0).max() > 1.0 + 1e-9:
                raise ValueError(f"{name} has a column with norm > 1")

    @property
    def d(self) -> int:
        return self.class_dicts[0].shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_dicts)

    @property
    def k_per_class(self) -> list[int]:
        return [D.shape[1] for D in self.class_dicts]

    @property
    def k_shared(self) -> int:
        return self.shared_dict.shape[1]

    def stacked_dict(self) -> np.ndarray:
        """[D_1, ..., D_C, D_0] as one d x (sum k_c + k_0) matrix."""
        return np.hstack(self.class_dicts + [self.shared_dict])

    def stacked_analysis(self) -> np.ndarray:
        """[A_1; ...; A_C; A_0] as one (sum k_c + k_0) x d matrix."""
        return np.vstack(self.class_analysis + [self.shared_analysis])


@dataclass
class Codes:
    """Per-class coefficient blocks produced during training."""

    class_codes: list[np.ndarray]   # X_cc, each k_c x N_c
    shared_codes: list[np.ndarray]  # X_0c, each k_0 x N_c

    def __post_init__(self):
        self.class_codes = [numerics.require_finite(X, f"class code {c}")
                            for c, X in enumerate(self.class_codes)]
        self.shared_codes = [numerics.require_finite(X, f"shared code {c}")
                             for c, X in enumerate(self.shared_codes)]
        if len(self.class_codes) != len(self.shared_codes):
            raise DimensionMismatch("code block lists are inconsistent")


class PatchCode(NamedTuple):
    """Analysis coefficients of a single patch, split by block."""

    class_codes: list[np.ndarray]
    shared_code: np.ndarray


def _check_class_index(model_or_data, c: int) -> None:
    C = model_or_data.num_classes
    if not 0 <= c < C:
        raise DimensionMismatch(f"class index {c} out of range for {C} classes")


def reconstruction_error(model: AlsfModel, codes: Codes, data: TrainingSet, c: int) -> float:
    """||Y_c - D_c X_cc - D_0 X_0c||_F^2 for class c."""
    _check_class_index(model, c)
    Y = data.per_class[c]
    R = Y - model.class_dicts[c] @ codes.class_codes[c]
    if model.k_shared:
        R = R - model.shared_dict @ codes.shared_codes[c]
    return float(np.sum(R * R))


def synthesis_cost(model: AlsfModel, codes: Codes, data: TrainingSet,
                   c: int, eta: float) -> float:
    """Per-class synthesis-side cost: reconstruction plus the shared-dictionary
    nuclear-norm penalty.

    The nuclear term belongs to the model globally; :func:`total_objective`
    counts it exactly once rather than once per class.
    """
    cost = reconstruction_error(model, codes, data, c)
    if eta:
        cost += eta * numerics.nuclear_norm(model.shared_dict)
    return cost


def analysis_cost(model: AlsfModel, data: TrainingSet, c: int, lambda1: float) -> float:
    """Per-class analysis-side cost.

    Suppression of class-c features on other classes' data, normalized by the
    complement sample count, plus the mean-anchoring term that pulls the
    shared operator toward class-invariant structure. With a single class the
    suppression term is defined as 0.
    """
    _check_class_index(model, c)
    Ybar = data.complement(c)
    cost = 0.0
    if Ybar.shape[1]:
        E = model.class_analysis[c] @ Ybar
        cost += float(np.sum(E * E)) / Ybar.shape[1]
    if lambda1 and model.k_shared:
        Y = data.per_class[c]
        E = model.shared_analysis @ (Y - data.mean_matrix(Y.shape[1]))
        cost += lambda1 * float(np.sum(E * E))
    return cost


def coupling_cost(model: AlsfModel, codes: Codes, data: TrainingSet, c: int,
                  lambda2: float, lambda3: float) -> float:
    """Code-consistency penalties tying codes to the analysis features."""
    _check_class_index(model, c)
    Y = data.per_class[c]
    cost = 0.0
    if lambda2:
        E = codes.class_codes[c] - model.class_analysis[c] @ Y
        cost += lambda2 * float(np.sum(E * E))
    if lambda3 and model.k_shared:
        E = codes.shared_codes[c] - model.shared_analysis @ Y
        cost += lambda3 * float(np.sum(E * E))
    return cost


def total_objective(model: AlsfModel, codes: Codes, data: TrainingSet,
                    hp: Hyperparams) -> float:
    """Full training objective.

    Sum over classes of reconstruction + tau * analysis cost + tau * coupling
    penalties, plus the shared-dictionary nuclear-norm term counted once
    globally.
    """
    total = 0.0
    for c in range(data.num_classes):
        total += reconstruction_error(model, codes, data, c)
        total += hp.tau * analysis_cost(model, data, c, hp.lambda1)
        total += hp.tau * coupling_cost(model, codes, data, c, hp.lambda2, hp.lambda3)
    if hp.eta and model.k_shared:
        total += hp.eta * numerics.nuclear_norm(model.shared_dict)
    return total


def encode(model: AlsfModel, y: np.ndarray) -> PatchCode:
    """Analysis coefficients of one patch: per-class slices A_c y and the
    shared slice A_0 y. A single matrix-vector product per block; no
    iterative solver is involved.
    """
    y = numerics.require_finite(y, "y")
    if y.shape != (model.d,):
        raise DimensionMismatch(f"patch vector must have length {model.d}")
    return PatchCode(
        class_codes=[A @ y for A in model.class_analysis],
        shared_code=model.shared_analysis @ y,
    )


def class_residual(model: AlsfModel, y: np.ndarray, c: int,
                   mode: str = "shared-subtracted") -> float:
    """Squared reconstruction residual of patch y under class c.

    mode "shared-subtracted" (default) removes the shared component
    D_0 A_0 y before measuring; "plain" uses the class blocks only.
    """
    y = numerics.require_finite(y, "y")
    _check_class_index(model, c)
    if y.shape != (model.d,):
        raise DimensionMismatch(f"patch vector must have length {model.d}")
    if mode not in RESIDUAL_MODES:
        raise ValueError(f"mode must be one of {RESIDUAL_MODES}")
    r = y - model.class_dicts[c] @ (model.class_analysis[c] @ y)
    if mode == "shared-subtracted" and model.k_shared:
        r = r - model.shared_dict @ (model.shared_analysis @ y)
    return float(r @ r)


def build_codes(model: AlsfModel, data: TrainingSet) -> Codes:
    """Consistency codes X_cc = A_c Y_c, X_0c = A_0 Y_c."""
    return Codes(
        class_codes=[model.class_analysis[c] @ data.per_class[c]
                     for c in range(data.num_classes)],
        shared_codes=[model.shared_analysis @ data.per_class[c]
                      for c in range(data.num_classes)],
    )
