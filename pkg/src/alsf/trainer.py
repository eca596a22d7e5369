"""Alternating closed-form training of the joint analysis-synthesis model.

Every block update is an exact least-squares or shrinkage solve of its own
convex subproblem; an outer iteration visits, per class, codes -> class
analysis operator -> class dictionary, then updates the shared analysis
operator and the shared dictionary. No block ever needs an iterative
inner solver.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .exceptions import DegenerateInit, InsufficientData, WeightError
from .model import (
    AlsfModel,
    Codes,
    Hyperparams,
    TrainingSet,
    build_codes,
    total_objective,
)

CLASS_BLOCK_ORDER = ("codes", "analysis", "dict")


@dataclass
class TrainReport:
    """Diagnostics collected by :func:`train`.

    objective_trace has one entry per completed iteration plus the initial
    value. subobjective_traces maps each block name to (before, after) pairs of
    the block's own subproblem objective, measured before feasibility
    projection; exact solves mean after <= before up to rounding.
    """

    objective_trace: list[float] = field(default_factory=list)
    subobjective_traces: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    iterations_run: int = 0
    stop_reason: str = "max-iters"
    diagnostic: str | None = None

    def record(self, block: str, before: float, after: float) -> None:
        self.subobjective_traces.setdefault(block, []).append((before, after))


def init_model(data: TrainingSet, hp: Hyperparams,
               labels: list[str] | None = None) -> tuple[AlsfModel, Codes]:
    """Initial dictionaries, operators, and codes.

    Class dictionaries start from k_per_class data columns sampled without
    replacement (seeded), projected to the unit-column feasible set. The
    shared dictionary starts from the top left singular vectors of the full
    data matrix. The stacked analysis operator is the pseudoinverse of the
    stacked dictionary, and codes start at the consistency values A_c Y_c,
    A_0 Y_c.
    """
    if any(n == 0 for n in data.class_counts):
        raise InsufficientData("every class needs at least one sample")
    Y_all = np.hstack(data.per_class)
    if not np.any(Y_all):
        raise DegenerateInit("training data is identically zero")
    if hp.k_shared > min(Y_all.shape):
        raise InsufficientData(
            f"k_shared={hp.k_shared} exceeds the data rank bound {min(Y_all.shape)}"
        )

    rng = np.random.default_rng(hp.seed)
    dicts = []
    for c, Y in enumerate(data.per_class):
        n = Y.shape[1]
        if n >= hp.k_per_class:
            idx = rng.choice(n, size=hp.k_per_class, replace=False)
        else:
            warnings.warn(
                f"class {c} has {n} samples < k_per_class={hp.k_per_class}; "
                "sampling columns with replacement")
            idx = rng.choice(n, size=hp.k_per_class, replace=True)
        dicts.append(numerics.project_columns_unit(Y[:, idx]))

    if hp.k_shared:
        U = np.linalg.svd(Y_all, full_matrices=False)[0]
        D0 = U[:, :hp.k_shared]
    else:
        D0 = np.zeros((data.d, 0))

    A = numerics.pseudoinverse(np.hstack(dicts + [D0]))
    offsets = np.cumsum([0] + [D.shape[1] for D in dicts])
    model = AlsfModel(
        class_dicts=dicts,
        shared_dict=D0,
        class_analysis=[A[offsets[c]:offsets[c + 1]] for c in range(len(dicts))],
        shared_analysis=A[offsets[-1]:],
        labels=labels,
    )
    return model, build_codes(model, data)


def _code_subobjective(model: AlsfModel, codes: Codes, data: TrainingSet,
                       hp: Hyperparams, c: int) -> float:
    Y = data.per_class[c]
    R = Y - model.class_dicts[c] @ codes.class_codes[c]
    if model.k_shared:
        R = R - model.shared_dict @ codes.shared_codes[c]
    val = float(np.sum(R * R))
    E = codes.class_codes[c] - model.class_analysis[c] @ Y
    val += hp.tau * hp.lambda2 * float(np.sum(E * E))
    if model.k_shared:
        E = codes.shared_codes[c] - model.shared_analysis @ Y
        val += hp.tau * hp.lambda3 * float(np.sum(E * E))
    return val


def update_codes(model: AlsfModel, codes: Codes, data: TrainingSet,
                 hp: Hyperparams, c: int) -> None:
    """Refresh X_0c then X_cc by exact solves of their stacked systems.

    Alternates code_sweeps times (the joint subproblem objective is
    monotonically non-increasing); with hp.joint_code_solve the coupled
    system over [D_c, D_0] is solved exactly in one shot instead.
    """
    Y = data.per_class[c]
    D, A = model.class_dicts[c], model.class_analysis[c]
    kc = D.shape[1]
    w2 = np.sqrt(hp.tau * hp.lambda2)
    AY = A @ Y

    if not model.k_shared:
        G = np.vstack([D, w2 * np.eye(kc)])
        H = np.vstack([Y, w2 * AY])
        codes.class_codes[c] = numerics.solve_lsq_left(G, H)
        return

    D0, A0 = model.shared_dict, model.shared_analysis
    k0 = D0.shape[1]
    w3 = np.sqrt(hp.tau * hp.lambda3)
    A0Y = A0 @ Y

    if hp.joint_code_solve:
        G = np.block([
            [D, D0],
            [w2 * np.eye(kc), np.zeros((kc, k0))],
            [np.zeros((k0, kc)), w3 * np.eye(k0)],
        ])
        H = np.vstack([Y, w2 * AY, w3 * A0Y])
        X = numerics.solve_lsq_left(G, H)
        codes.class_codes[c] = X[:kc]
        codes.shared_codes[c] = X[kc:]
        return

    G0 = np.vstack([D0, w3 * np.eye(k0)])
    Gc = np.vstack([D, w2 * np.eye(kc)])
    for _ in range(hp.code_sweeps):
        H0 = np.vstack([Y - D @ codes.class_codes[c], w3 * A0Y])
        codes.shared_codes[c] = numerics.solve_lsq_left(G0, H0)
        Hc = np.vstack([Y - D0 @ codes.shared_codes[c], w2 * AY])
        codes.class_codes[c] = numerics.solve_lsq_left(Gc, Hc)


def _analysis_class_system(model: AlsfModel, codes: Codes, data: TrainingSet,
                           hp: Hyperparams, c: int) -> tuple[np.ndarray, np.ndarray]:
    """Horizontally stacked system whose row-space solve gives A_c."""
    Y = data.per_class[c]
    Ybar = data.complement(c)
    w2 = np.sqrt(hp.lambda2)
    blocks_G, blocks_H = [], []
    kc = model.class_dicts[c].shape[1]
    if Ybar.shape[1]:
        blocks_G.append(Ybar / Ybar.shape[1])
        blocks_H.append(np.zeros((kc, Ybar.shape[1])))
    blocks_G.append(w2 * Y)
    blocks_H.append(w2 * codes.class_codes[c])
    if hp.eta1:
        blocks_G.append(np.sqrt(hp.eta1) * np.eye(data.d))
        blocks_H.append(np.zeros((kc, data.d)))
    return np.hstack(blocks_G), np.hstack(blocks_H)


def update_analysis_class(model: AlsfModel, codes: Codes, data: TrainingSet,
                          hp: Hyperparams, c: int) -> None:
    """Exact solve for class c's analysis operator.

    Stacks the other-class suppression block, the code-consistency block,
    and the ridge block into one right-sided least-squares system. With a
    single class the suppression block is dropped.
    """
    G, H = _analysis_class_system(model, codes, data, hp, c)
    if G.shape[1] == 0:
        return
    model.class_analysis[c] = numerics.solve_lsq_right(G, H)


def _analysis_shared_system(model: AlsfModel, codes: Codes, data: TrainingSet,
                            hp: Hyperparams) -> tuple[np.ndarray, np.ndarray]:
    if hp.lambda1 > 0 and hp.lambda3 == 0:
        raise WeightError("lambda3 = 0 with lambda1 > 0 leaves the shared-operator "
                          "mean block with an undefined weight")
    w = np.sqrt(hp.lambda1 / hp.lambda3) if hp.lambda1 > 0 else 0.0
    k0 = model.k_shared
    blocks_G, blocks_H = [], []
    for c, Y in enumerate(data.per_class):
        blocks_G.append(Y)
        blocks_H.append(codes.shared_codes[c])
        if w:
            blocks_G.append(w * (Y - data.mean_matrix(Y.shape[1])))
            blocks_H.append(np.zeros((k0, Y.shape[1])))
    return np.hstack(blocks_G), np.hstack(blocks_H)


def update_analysis_shared(model: AlsfModel, codes: Codes, data: TrainingSet,
                           hp: Hyperparams) -> None:
    """Exact ridge solve for the shared analysis operator.

    Per class, stacks a code-consistency block Y_c -> X_0c and a
    mean-deviation block (Y_c - mean matrix) -> 0; ridge_a0 keeps the
    near-singular patch Gram matrices tractable.
    """
    G, H = _analysis_shared_system(model, codes, data, hp)
    model.shared_analysis = numerics.solve_lsq_right(G, H, ridge=hp.ridge_a0)


_DICT_RIDGE = 1e-10  # conditioning only; keeps rank-deficient code solves finite


def update_dict_class(model: AlsfModel, codes: Codes, data: TrainingSet, c: int) -> None:
    """Least-squares refresh of class c's dictionary, then unit-column projection.

    All-zero codes leave the dictionary unchanged (the data term vanishes and
    the ridge would otherwise drag it to zero).
    """
    X = codes.class_codes[c]
    if not np.any(X):
        return
    T = data.per_class[c] - (model.shared_dict @ codes.shared_codes[c]
                             if model.k_shared else 0.0)
    D = numerics.solve_lsq_right(X, T, ridge=_DICT_RIDGE)
    model.class_dicts[c] = numerics.project_columns_unit(D)


def update_dict_shared(model: AlsfModel, codes: Codes, data: TrainingSet,
                       hp: Hyperparams) -> None:
    """Shrinkage refresh of the shared dictionary.

    Concatenates per-class residuals R_c = Y_c - D_c X_cc and shared codes
    across classes, forms M = R X_0^+, then applies singular-value
    soft-shrinkage at eta/2 (the exact proximal step for the nuclear
    penalty as weighted in the objective) and the unit-column projection.
    Identically zero shared codes leave the dictionary unchanged.
    """
    X0 = np.hstack(codes.shared_codes)
    if not np.any(X0):
        return
    R = np.hstack([data.per_class[c] - model.class_dicts[c] @ codes.class_codes[c]
                   for c in range(data.num_classes)])
    M = R @ numerics.pseudoinverse(X0)
    D0 = M if hp.eta == 0 else numerics.singular_value_threshold(M, hp.eta / 2.0)
    model.shared_dict = numerics.project_columns_unit(D0)


def _dict_class_subobjective(model, codes, data, c) -> float:
    T = data.per_class[c] - (model.shared_dict @ codes.shared_codes[c]
                             if model.k_shared else 0.0)
    R = model.class_dicts[c] @ codes.class_codes[c] - T
    return float(np.sum(R * R)) + _DICT_RIDGE * float(np.sum(model.class_dicts[c] ** 2))


def _dict_shared_subobjective(model, codes, data, hp) -> float:
    X0 = np.hstack(codes.shared_codes)
    R = np.hstack([data.per_class[c] - model.class_dicts[c] @ codes.class_codes[c]
                   for c in range(data.num_classes)])
    M = R @ numerics.pseudoinverse(X0)
    E = M - model.shared_dict
    return float(np.sum(E * E)) + hp.eta * numerics.nuclear_norm(model.shared_dict)


def _stacked_lsq_objective(G, H, A, ridge=0.0) -> float:
    E = A @ G - H
    val = float(np.sum(E * E))
    if ridge:
        val += ridge * float(np.sum(A * A))
    return val


def train(data: TrainingSet, hp: Hyperparams, labels: list[str] | None = None,
          block_order: tuple[str, ...] = CLASS_BLOCK_ORDER,
          ) -> tuple[AlsfModel, TrainReport]:
    """Run the alternating solver until the objective stalls or max_iters.

    block_order selects the per-class update sequence (ablation hook); the
    default visits codes, then the analysis operator, then the dictionary.
    Returns the trained model and a TrainReport whose objective trace starts
    at the post-initialization value. A non-finite objective stops training
    with stop_reason "degenerate" and a diagnostic message.
    """
    if set(block_order) != set(CLASS_BLOCK_ORDER):
        raise ValueError(f"block_order must be a permutation of {CLASS_BLOCK_ORDER}")
    model, codes = init_model(data, hp, labels)
    report = TrainReport()
    obj0 = total_objective(model, codes, data, hp)
    if not np.isfinite(obj0):
        # Finite data can still overflow the squared norms; bail out before
        # the trace picks up a non-finite entry.
        report.stop_reason = "degenerate"
        report.diagnostic = "objective non-finite at initialization"
        return model, report
    report.objective_trace.append(obj0)

    class_steppers = {
        "codes": lambda c: _step_codes(model, codes, data, hp, c, report),
        "analysis": lambda c: _step_analysis_class(model, codes, data, hp, c, report),
        "dict": lambda c: _step_dict_class(model, codes, data, c, report),
    }

    for it in range(1, hp.max_iters + 1):
        for c in range(data.num_classes):
            for block in block_order:
                class_steppers[block](c)
        if model.k_shared:
            _step_analysis_shared(model, codes, data, hp, report)
            _step_dict_shared(model, codes, data, hp, report)

        obj = total_objective(model, codes, data, hp)
        if not np.isfinite(obj):
            report.stop_reason = "degenerate"
            report.diagnostic = f"objective became non-finite at iteration {it}"
            break
        report.objective_trace.append(obj)
        report.iterations_run = it
        prev = report.objective_trace[-2]
        if abs(prev - obj) <= hp.rel_tol * max(abs(prev), 1e-300):
            report.stop_reason = "rel-tol"
            break
    else:
        report.stop_reason = "max-iters"
    return model, report


def _step_codes(model, codes, data, hp, c, report):
    before = _code_subobjective(model, codes, data, hp, c)
    update_codes(model, codes, data, hp, c)
    report.record("codes", before, _code_subobjective(model, codes, data, hp, c))


def _step_analysis_class(model, codes, data, hp, c, report):
    G, H = _analysis_class_system(model, codes, data, hp, c)
    if G.shape[1] == 0:
        return
    before = _stacked_lsq_objective(G, H, model.class_analysis[c])
    model.class_analysis[c] = numerics.solve_lsq_right(G, H)
    report.record("analysis_class", before,
                  _stacked_lsq_objective(G, H, model.class_analysis[c]))


def _step_dict_class(model, codes, data, c, report):
    if not np.any(codes.class_codes[c]):
        return
    before = _dict_class_subobjective(model, codes, data, c)
    T = data.per_class[c] - (model.shared_dict @ codes.shared_codes[c]
                             if model.k_shared else 0.0)
    D = numerics.solve_lsq_right(codes.class_codes[c], T, ridge=_DICT_RIDGE)
    # Subobjective measured before the feasibility projection.
    model.class_dicts[c] = D
    report.record("dict_class", before, _dict_class_subobjective(model, codes, data, c))
    model.class_dicts[c] = numerics.project_columns_unit(D)


def _step_analysis_shared(model, codes, data, hp, report):
    G, H = _analysis_shared_system(model, codes, data, hp)
    before = _stacked_lsq_objective(G, H, model.shared_analysis, ridge=hp.ridge_a0)
    model.shared_analysis = numerics.solve_lsq_right(G, H, ridge=hp.ridge_a0)
    report.record("analysis_shared", before,
                  _stacked_lsq_objective(G, H, model.shared_analysis, ridge=hp.ridge_a0))


def _step_dict_shared(model, codes, data, hp, report):
    X0 = np.hstack(codes.shared_codes)
    if not np.any(X0):
        return
    before = _dict_shared_subobjective(model, codes, data, hp)
    R = np.hstack([data.per_class[c] - model.class_dicts[c] @ codes.class_codes[c]
                   for c in range(data.num_classes)])
    M = R @ numerics.pseudoinverse(X0)
    D0 = M if hp.eta == 0 else numerics.singular_value_threshold(M, hp.eta / 2.0)
    model.shared_dict = D0
    report.record("dict_shared", before,
                  _dict_shared_subobjective(model, codes, data, hp))
    model.shared_dict = numerics.project_columns_unit(D0)


def patch_accuracy(model: AlsfModel, data: TrainingSet,
                   mode: str = "shared-subtracted") -> float:
    """Fraction of patches assigned to their own class by the residual rule."""
    from .classifier import predict_classes

    correct = total = 0
    for c, Y in enumerate(data.per_class):
        pred = predict_classes(Y.T, model, mode)
        correct += int(np.sum(pred == c))
        total += Y.shape[1]
    return correct / total


def cross_validate(data: TrainingSet, grid: list[Hyperparams], folds: int,
                   seed: int = 0, mode: str = "shared-subtracted",
                   n_workers: int = 1) -> tuple[Hyperparams, list[list[float]]]:
    """Stratified k-fold selection over a hyperparameter grid.

    Splits each class's columns into `folds` chunks with a seeded shuffle,
    trains every grid point on the k-1 remaining chunks, and scores patch
    accuracy on the held-out chunk. Returns the grid point with the best
    mean accuracy (first in grid order on ties) and the per-point fold
    score table. Fold runs are independent; n_workers > 1 executes them
    in a thread pool.
    """
    if folds < 2:
        raise InsufficientData("folds must be >= 2")
    if not grid:
        raise InsufficientData("grid must be nonempty")
    if any(n < folds for n in data.class_counts):
        raise InsufficientData("every class needs at least `folds` samples")

    rng = np.random.default_rng(seed)
    perms = [rng.permutation(n) for n in data.class_counts]
    chunks = [np.array_split(p, folds) for p in perms]

    def fold_split(f: int) -> tuple[TrainingSet, TrainingSet]:
        tr, va = [], []
        for c, Y in enumerate(data.per_class):
            hold = chunks[c][f]
            keep = np.concatenate([chunks[c][g] for g in range(folds) if g != f])
            tr.append(Y[:, keep])
            va.append(Y[:, hold])
        return TrainingSet(tr), TrainingSet(va)

    splits = [fold_split(f) for f in range(folds)]

    def score_one(args):
        hp, f = args
        tr, va = splits[f]
        m, _ = train(tr, hp)
        return patch_accuracy(m, va, mode)

    jobs = [(hp, f) for hp in grid for f in range(folds)]
    if n_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            flat = list(ex.map(score_one, jobs))
    else:
        flat = [score_one(j) for j in jobs]

    table = [flat[i * folds:(i + 1) * folds] for i in range(len(grid))]
    means = [sum(r) / folds for r in table]
    best = int(np.argmax(means))  # first occurrence wins ties
    return grid[best], table
