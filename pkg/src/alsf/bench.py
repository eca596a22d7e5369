"""Runtime benchmark: closed-form classification vs an iterative sparse coder.

The point of the comparison is structural: classifying a patch here costs a
fixed number of matrix products, while classical sparse-representation
classifiers solve an optimization problem per patch. The bundled baseline
is a generic lasso-style coordinate-descent coder (vectorized across the
patch batch, so the comparison is not rigged by Python loop overhead on the
baseline's inner dimension alone).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import numerics
from .classifier import predict_classes
from .exceptions import DimensionMismatch
from .model import AlsfModel


def make_random_model(d: int, num_classes: int, k_per_class: int, k_shared: int,
                      seed: int = 0) -> AlsfModel:
    """Synthetic model with unit-norm random dictionaries and pinv analysis."""
    if min(d, num_classes, k_per_class) < 1 or k_shared < 0:
        raise DimensionMismatch("d, num_classes, k_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    dicts = [numerics.project_columns_unit(rng.standard_normal((d, k_per_class)))
             for _ in range(num_classes)]
    D0 = numerics.project_columns_unit(rng.standard_normal((d, k_shared)))
    A = numerics.pseudoinverse(np.hstack(dicts + [D0]))
    return AlsfModel(
        class_dicts=dicts,
        shared_dict=D0,
        class_analysis=[A[c * k_per_class:(c + 1) * k_per_class]
                        for c in range(num_classes)],
        shared_analysis=A[num_classes * k_per_class:],
    )


def cd_sparse_code(D: np.ndarray, Y: np.ndarray, alpha: float = 0.05,
                   sweeps: int = 50) -> np.ndarray:
    """Lasso coordinate descent: min_X 0.5||Y - DX||_F^2 + alpha ||X||_1.

    Runs `sweeps` full passes over the coordinates, updating all columns of
    X simultaneously. Every sweep registers one iterative-solve invocation
    per patch on the instrumentation counter.
    """
    d, k = D.shape
    n = Y.shape[1]
    gram_diag = np.sum(D * D, axis=0)
    gram_diag = np.maximum(gram_diag, 1e-12)
    X = np.zeros((k, n))
    R = Y.copy()
    for _ in range(sweeps):
        numerics.record_iterative_solve(n)
        for j in range(k):
            dj = D[:, j]
            v = X[j] + (dj @ R) / gram_diag[j]
            new = np.sign(v) * np.maximum(np.abs(v) - alpha / gram_diag[j], 0.0)
            delta = new - X[j]
            if np.any(delta):
                R -= np.outer(dj, delta)
                X[j] = new
    return X


def baseline_classify(model: AlsfModel, patches: np.ndarray,
                      alpha: float = 0.05, sweeps: int = 50) -> np.ndarray:
    """Classify by sparse-coding over the stacked dictionary, then block residuals."""
    D = model.stacked_dict()
    Y = np.ascontiguousarray(np.asarray(patches, dtype=np.float64).T)
    X = cd_sparse_code(D, Y, alpha=alpha, sweeps=sweeps)
    offsets = np.concatenate(([0], np.cumsum(model.k_per_class)))
    shared = model.shared_dict @ X[offsets[-1]:] if model.k_shared else 0.0
    best = np.full(Y.shape[1], -1)
    best_res = np.full(Y.shape[1], np.inf)
    for c in range(model.num_classes):
        lo, hi = offsets[c], offsets[c + 1]
        R = Y - model.class_dicts[c] @ X[lo:hi] - shared
        res = np.sum(R * R, axis=0)
        take = res < best_res
        best[take] = c
        best_res[take] = res[take]
    return best


@dataclass(frozen=True)
class BenchResult:
    d: int
    num_classes: int
    k_per_class: int
    k_shared: int
    n_patches: int
    repetitions: int
    closed_form_seconds: float   # median batch wall time
    baseline_seconds: float      # median batch wall time, 50-sweep coder
    solver_calls_closed_form: int
    solver_calls_baseline: int

    @property
    def speedup(self) -> float:
        return self.baseline_seconds / self.closed_form_seconds

    @property
    def per_patch_seconds(self) -> float:
        return self.closed_form_seconds / self.n_patches


def _median_time(fn, repetitions: int) -> float:
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def time_closed_form(model: AlsfModel, patches: np.ndarray,
                     repetitions: int) -> float:
    """Median wall time to label the batch with the closed-form path."""
    return _median_time(lambda: predict_classes(patches, model), repetitions)


def time_baseline(model: AlsfModel, patches: np.ndarray, repetitions: int,
                  sweeps: int = 50) -> float:
    """Median wall time for the coordinate-descent baseline on the batch."""
    return _median_time(lambda: baseline_classify(model, patches, sweeps=sweeps),
                        repetitions)


def run_bench(d: int, num_classes: int, k_per_class: int, k_shared: int,
              n_patches: int, repetitions: int, seed: int = 0,
              model: AlsfModel | None = None, sweeps: int = 50) -> BenchResult:
    """Time both paths on one random patch batch and report medians."""
    if n_patches < 1 or repetitions < 1:
        raise DimensionMismatch("n_patches and repetitions must be >= 1")
    if model is None:
        model = make_random_model(d, num_classes, k_per_class, k_shared, seed)
    rng = np.random.default_rng(seed)
    patches = rng.standard_normal((n_patches, model.d))

    numerics.reset_iterative_solver_calls()
    t_fast = time_closed_form(model, patches, repetitions)
    calls_fast = numerics.iterative_solver_calls()

    numerics.reset_iterative_solver_calls()
    t_base = time_baseline(model, patches, repetitions, sweeps=sweeps)
    calls_base = numerics.iterative_solver_calls()

    return BenchResult(
        d=model.d, num_classes=model.num_classes,
        k_per_class=max(model.k_per_class), k_shared=model.k_shared,
        n_patches=n_patches, repetitions=repetitions,
        closed_form_seconds=t_fast, baseline_seconds=t_base,
        solver_calls_closed_form=calls_fast, solver_calls_baseline=calls_base,
    )
