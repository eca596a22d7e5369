"""Acceptance suite: end-to-end guarantees the package ships with.

Each test checks one headline property at its stated tolerance and runtime
budget and prints a single PASS/FAIL line (visible with pytest -s or in the
captured output); the property lives in the assert, so a red test is a real
acceptance failure.
"""

import time

import numpy as np
import pytest

import _oracles as orc
from alsf import cli, numerics, trainer
from alsf.bench import cd_sparse_code, make_random_model, run_bench
from alsf.classifier import DecisionRule, classify_grid, decide_image, predict_classes
from alsf.data import (
    ImageBuffer,
    RegionMask,
    SynthSpec,
    extract_grid_patches,
    extract_random_patches,
    synth_generate,
)
from alsf.exceptions import NoValidPlacement
from alsf.model import Hyperparams, TrainingSet, total_objective
from helpers import random_instance

RESULTS = []


def _report(num: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"[acceptance {num}] {'PASS' if ok else 'FAIL'} {name}"
    if detail:
        line += f" ({detail})"
    print(line)
    RESULTS.append(line)
    assert ok, line


# ------------------------------------------------------------------ 1

def _code_subobj(model, codes, data, hp, c):
    Y = data.per_class[c]
    R = Y - model.class_dicts[c] @ codes.class_codes[c]
    R = R - model.shared_dict @ codes.shared_codes[c]
    val = float(np.sum(R * R))
    E = codes.class_codes[c] - model.class_analysis[c] @ Y
    val += hp.tau * hp.lambda2 * float(np.sum(E * E))
    E = codes.shared_codes[c] - model.shared_analysis @ Y
    val += hp.tau * hp.lambda3 * float(np.sum(E * E))
    return val


def _analysis_class_GH(model, codes, data, hp, c):
    Y, Ybar = data.per_class[c], data.complement(c)
    kc = model.class_dicts[c].shape[1]
    w2 = np.sqrt(hp.lambda2)
    G = np.hstack([Ybar / Ybar.shape[1], w2 * Y, np.sqrt(hp.eta1) * np.eye(data.d)])
    H = np.hstack([np.zeros((kc, Ybar.shape[1])), w2 * codes.class_codes[c],
                   np.zeros((kc, data.d))])
    return G, H


def _analysis_shared_GH(model, codes, data, hp):
    w = np.sqrt(hp.lambda1 / hp.lambda3)
    Gs, Hs = [], []
    for c, Y in enumerate(data.per_class):
        Gs += [Y, w * (Y - data.mean_matrix(Y.shape[1]))]
        Hs += [codes.shared_codes[c], np.zeros((model.k_shared, Y.shape[1]))]
    return np.hstack(Gs), np.hstack(Hs)


def _right_residual(A, G, H, ridge=0.0):
    """Relative stationarity residual of min ||A G - H||^2 + ridge ||A||^2."""
    lhs = (A @ G) @ G.T + ridge * A
    rhs = H @ G.T
    return float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), 1e-30))


def test_01_every_block_update_is_an_exact_subproblem_solve():
    hp = Hyperparams(k_per_class=10, k_shared=5)
    worst_res, worst_rise = 0.0, -np.inf
    t0 = time.perf_counter()
    for seed in range(100):
        rng = np.random.default_rng(seed)
        model, codes, data = random_instance(rng, d=30, ks=(10, 10), k0=5,
                                             ns=(50, 50))
        for c in range(2):
            Y = data.per_class[c]
            # -- codes: two stacked solves, alternating
            Xcc_old = codes.class_codes[c].copy()
            before = _code_subobj(model, codes, data, hp, c)
            trainer.update_codes(model, codes, data, hp, c)
            after = _code_subobj(model, codes, data, hp, c)
            worst_rise = max(worst_rise, after - before)
            w3 = np.sqrt(hp.tau * hp.lambda3)
            G0 = np.vstack([model.shared_dict, w3 * np.eye(5)])
            H0 = np.vstack([Y - model.class_dicts[c] @ Xcc_old,
                            w3 * model.shared_analysis @ Y])
            worst_res = max(worst_res, orc.normal_eq_residual(
                G0, H0, codes.shared_codes[c]))
            w2 = np.sqrt(hp.tau * hp.lambda2)
            Gc = np.vstack([model.class_dicts[c], w2 * np.eye(10)])
            Hc = np.vstack([Y - model.shared_dict @ codes.shared_codes[c],
                            w2 * model.class_analysis[c] @ Y])
            worst_res = max(worst_res, orc.normal_eq_residual(
                Gc, Hc, codes.class_codes[c]))

            # -- class analysis operator
            G, H = _analysis_class_GH(model, codes, data, hp, c)
            before = orc.lsq_objective(G.T, H.T, model.class_analysis[c].T)
            trainer.update_analysis_class(model, codes, data, hp, c)
            A = model.class_analysis[c]
            worst_res = max(worst_res, _right_residual(A, G, H))
            worst_rise = max(worst_rise,
                             orc.lsq_objective(G.T, H.T, A.T) - before)

            # -- class dictionary (checked before the unit-column projection)
            X = codes.class_codes[c]
            T = Y - model.shared_dict @ codes.shared_codes[c]
            D_old = model.class_dicts[c]
            before = orc.lsq_objective(X.T, T.T, D_old.T, ridge=1e-10)
            D_pre = numerics.solve_lsq_right(X, T, ridge=1e-10)
            worst_res = max(worst_res, _right_residual(D_pre, X, T, ridge=1e-10))
            worst_rise = max(worst_rise,
                             orc.lsq_objective(X.T, T.T, D_pre.T, ridge=1e-10)
                             - before)
            trainer.update_dict_class(model, codes, data, c)
            assert np.array_equal(model.class_dicts[c],
                                  numerics.project_columns_unit(D_pre))

        # -- shared analysis operator
        G, H = _analysis_shared_GH(model, codes, data, hp)
        before = orc.lsq_objective(G.T, H.T, model.shared_analysis.T,
                                   ridge=hp.ridge_a0)
        trainer.update_analysis_shared(model, codes, data, hp)
        A0 = model.shared_analysis
        worst_res = max(worst_res, _right_residual(A0, G, H, ridge=hp.ridge_a0))
        worst_rise = max(worst_rise,
                         orc.lsq_objective(G.T, H.T, A0.T, ridge=hp.ridge_a0)
                         - before)

        # -- shared dictionary: min-norm fit, then singular-value shrinkage
        X0 = np.hstack(codes.shared_codes)
        R = np.hstack([data.per_class[c] - model.class_dicts[c]
                       @ codes.class_codes[c] for c in range(2)])
        M = R @ numerics.pseudoinverse(X0)
        worst_res = max(worst_res, _right_residual(M, X0, R))
        D0_old = model.shared_dict
        before = (float(np.sum((D0_old - M) ** 2))
                  + hp.eta * float(np.linalg.svd(D0_old, compute_uv=False).sum()))
        D0_pre = numerics.singular_value_threshold(M, hp.eta / 2.0)
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
        rebuilt = (U * np.maximum(s - hp.eta / 2.0, 0.0)) @ Vt
        assert np.allclose(D0_pre, rebuilt, atol=1e-9)
        after = (float(np.sum((D0_pre - M) ** 2))
                 + hp.eta * float(np.linalg.svd(D0_pre, compute_uv=False).sum()))
        worst_rise = max(worst_rise, after - before)
        trainer.update_dict_shared(model, codes, data, hp)
        assert np.array_equal(model.shared_dict,
                              numerics.project_columns_unit(D0_pre))

    elapsed = time.perf_counter() - t0
    ok = worst_res <= 1e-9 and worst_rise <= 1e-9 and elapsed <= 10.0
    _report(1, "block updates solve their subproblems exactly", ok,
            f"max rel residual {worst_res:.2e}, max subobjective rise "
            f"{worst_rise:.2e}, {elapsed:.1f}s for 100 instances")


# ------------------------------------------------------------------ 2

def test_02_singular_value_shrinkage_is_the_nuclear_prox():
    rng = np.random.default_rng(7)
    worst_sv, worst_gap = 0.0, -np.inf
    t0 = time.perf_counter()
    for _ in range(100):
        m, n = rng.integers(1, 51), rng.integers(1, 41)
        M = rng.standard_normal((m, n)) * rng.uniform(0.1, 3.0)
        tau = float(rng.uniform(0.01, 3.0))
        D = numerics.singular_value_threshold(M, tau)
        s_in = np.linalg.svd(M, compute_uv=False)
        s_out = np.linalg.svd(D, compute_uv=False)
        worst_sv = max(worst_sv,
                       float(np.abs(s_out - np.maximum(s_in - tau, 0.0)).max()))
        base = orc.svt_prox_objective(D, M, tau)
        for _ in range(100):
            P = D + rng.standard_normal(D.shape) * rng.uniform(1e-4, 1.0)
            worst_gap = max(worst_gap, base - orc.svt_prox_objective(P, M, tau))
    elapsed = time.perf_counter() - t0
    ok = worst_sv <= 1e-10 and worst_gap <= 1e-12 and elapsed <= 5.0
    _report(2, "singular values soft-threshold exactly and minimize the prox",
            ok, f"max sv error {worst_sv:.2e}, max objective excess "
            f"{max(worst_gap, 0.0):.2e} over 10000 perturbations, {elapsed:.1f}s")


# ------------------------------------------------------------------ 3

def test_03_training_descends_at_least_ten_percent():
    hp = Hyperparams(k_per_class=20, k_shared=8)
    worst_dec, worst_time = np.inf, 0.0
    for seed in range(20):
        sd = synth_generate(SynthSpec(dim=100, num_classes=2, class_dim=10,
                                      shared_dim=5, per_class=400,
                                      noise_sigma=0.05, seed=seed))
        t0 = time.perf_counter()
        _, rep = trainer.train(sd.data, hp)
        worst_time = max(worst_time, time.perf_counter() - t0)
        trace = np.array(rep.objective_trace)
        assert np.isfinite(trace).all(), f"non-finite trace at seed {seed}"
        assert trace[-1] <= trace[0]
        worst_dec = min(worst_dec, (trace[0] - trace[-1]) / trace[0])
    ok = worst_dec >= 0.10 and worst_time <= 60.0
    _report(3, "objective decreases >= 10% on 20 synthetic runs", ok,
            f"min relative decrease {worst_dec:.3f}, slowest run "
            f"{worst_time:.1f}s")


# ------------------------------------------------------------------ 4

def test_04_patch_accuracy_matches_the_subspace_oracle():
    sd = synth_generate(SynthSpec(dim=100, num_classes=2, class_dim=5,
                                  shared_dim=3, per_class=800,
                                  noise_sigma=0.01, seed=0))
    train_set = TrainingSet([Y[:, :400] for Y in sd.data.per_class])
    hold = [Y[:, 400:] for Y in sd.data.per_class]
    X_hold = np.hstack(hold)
    y_hold = np.repeat([0, 1], 400)

    model, _ = trainer.train(train_set, Hyperparams(k_per_class=40, k_shared=10))
    alsf_acc = float(np.mean(predict_classes(X_hold.T, model) == y_hold))
    oracle_acc = float(np.mean(
        orc.nearest_subspace_predict(sd.class_bases, sd.shared_basis, X_hold)
        == y_hold))
    ok = alsf_acc >= 0.98 and alsf_acc >= oracle_acc - 0.02
    _report(4, "held-out accuracy >= 98% and within 2pp of the oracle", ok,
            f"model {alsf_acc:.4f}, oracle {oracle_acc:.4f}")


# ------------------------------------------------------------------ 5

def test_05_stronger_nuclear_penalty_never_raises_shared_rank():
    sd = synth_generate(SynthSpec(dim=60, num_classes=2, class_dim=5,
                                  shared_dim=3, per_class=150,
                                  noise_sigma=0.02, seed=0))
    ranks = []
    for eta in (0.1, 1.0, 10.0):
        hp = Hyperparams(k_per_class=15, k_shared=10, eta=eta, max_iters=30,
                         seed=0)
        model, _ = trainer.train(sd.data, hp)
        s = np.linalg.svd(model.shared_dict, compute_uv=False)
        ranks.append(int(np.sum(s > 1e-6 * s.max())) if s.size and s.max() > 0
                     else 0)
    ok = ranks[0] >= ranks[1] >= ranks[2]
    _report(5, "shared-dictionary rank is non-increasing in the penalty", ok,
            f"ranks {ranks} over a 100x penalty ladder")


# ------------------------------------------------------------------ 6

def test_06_classification_is_solver_free_linear_and_faster():
    model = make_random_model(400, 2, 400, 100, seed=0)
    rng = np.random.default_rng(1)

    # the instrumentation counter is live: the iterative baseline trips it
    numerics.reset_iterative_solver_calls()
    cd_sparse_code(np.hstack(model.class_dicts + [model.shared_dict]),
                   rng.standard_normal((400, 2)), sweeps=2)
    assert numerics.iterative_solver_calls() > 0

    # the classification path never does
    numerics.reset_iterative_solver_calls()
    patches = rng.standard_normal((130, 400))
    grid = classify_grid(patches, 10, 13, model, "shared-subtracted")
    decide_image(grid, DecisionRule(kind="ratio", positive_class=0,
                                    threshold=0.5))
    predict_classes(patches, model, "plain")
    solver_free = numerics.iterative_solver_calls() == 0

    # per-patch cost is flat over a 2x batch-size range
    def per_patch_seconds(n):
        X = rng.standard_normal((n, 400))
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            predict_classes(X, model)
            best = min(best, time.perf_counter() - t0)
        return best / n

    ratio = per_patch_seconds(4000) / per_patch_seconds(2000)
    linear = abs(ratio - 1.0) <= 0.25

    result = run_bench(400, 2, 400, 100, n_patches=20, repetitions=3, seed=0,
                       sweeps=50)
    ok = (solver_free and linear and result.speedup >= 5.0
          and result.solver_calls_closed_form == 0)
    _report(6, "classification is solver-free, linear, and >= 5x faster", ok,
            f"solver calls 0, per-patch ratio {ratio:.2f}, "
            f"speedup {result.speedup:.0f}x")


# ------------------------------------------------------------------ 7

def test_07_objective_reduces_to_the_shared_free_form():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        ks = tuple(rng.integers(3, 9, size=2))
        ns = tuple(rng.integers(10, 30, size=2))
        model, codes, data = random_instance(rng, d=20, ks=ks, k0=0, ns=ns)
        hp = Hyperparams(k_per_class=int(ks[0]), k_shared=0,
                         lambda1=0.0, lambda3=0.0,
                         tau=float(rng.uniform(0.1, 3.0)),
                         lambda2=float(rng.uniform(0.001, 0.5)))
        a = total_objective(model, codes, data, hp)
        b = orc.baseline_objective_direct(model, codes, data, hp)
        worst = max(worst, abs(a - b) / max(abs(b), 1e-30))
    ok = worst <= 1e-10
    _report(7, "objective equals the shared-free evaluator term-by-term", ok,
            f"max relative gap {worst:.2e} over 20 instances")


# ------------------------------------------------------------------ 8

def test_08_grid_count_is_exact_and_masks_are_never_violated():
    img = ImageBuffer(np.random.default_rng(2).uniform(0, 1, (205, 272)))
    g = extract_grid_patches(img, 20)
    grid_ok = (g.rows, g.cols, g.patches.shape) == (10, 13, (130, 400))

    # every mask of a 3x4 image, size-2 patches; pixel values encode their
    # own coordinates so each returned patch reveals its anchor
    h, w, size = 3, 4, 2
    coded = ImageBuffer(np.arange(h * w, dtype=float).reshape(h, w) / (h * w))
    violations = 0
    for bits in range(1 << (h * w)):
        m = np.array([(bits >> i) & 1 for i in range(h * w)],
                     dtype=bool).reshape(h, w)
        valid = {(i, j) for i in range(h - size + 1) for j in range(w - size + 1)
                 if m[i:i + size, j:j + size].all()}
        try:
            patches = extract_random_patches(coded, 3, size, RegionMask(m),
                                             seed=bits)
        except NoValidPlacement:
            violations += bool(valid)
            continue
        violations += not valid
        for vec in patches:
            i, j = divmod(round(float(vec[0]) * h * w), w)
            violations += (i, j) not in valid
    ok = grid_ok and violations == 0
    _report(8, "grid extraction is exact and masks are honored exhaustively",
            ok, f"grid 10x13=130, {1 << (h * w)} masks, "
            f"{violations} violations")


# ------------------------------------------------------------------ 9

def _run_zero_noise_pipeline(root):
    root.mkdir()
    man = root / "data" / "synth.manifest"
    assert cli.main(["synth", "--out", str(man)]) == 0
    model = root / "model.alsf"
    assert cli.main(["train", "--manifest", str(man),
                     "--model", str(model)]) == 0
    ev = root / "eval.txt"
    assert cli.main(["eval", "--model", str(model), "--manifest", str(man),
                     "--out", str(ev)]) == 0
    report = (root / "model.alsf.report.txt").read_text()
    return {
        "model": model.read_bytes(),
        "report": report.split(cli.TIMING_HEADER)[0],
        "rule": (root / "model.alsf.rule.json").read_bytes(),
        "eval": ev.read_bytes(),
        "confusion": ev.read_text().strip().split("\n")[2:4],
    }


def test_09_zero_noise_pipeline_is_perfect_and_reproducible(tmp_path):
    a = _run_zero_noise_pipeline(tmp_path / "a")
    b = _run_zero_noise_pipeline(tmp_path / "b")
    diag = [float(row.split(",")[1 + i]) for i, row in enumerate(a["confusion"])]
    identical = all(a[k] == b[k] for k in ("model", "report", "rule", "eval"))
    ok = diag == [1.0, 1.0] and identical
    _report(9, "zero-noise pipeline is perfect and byte-reproducible", ok,
            f"confusion diagonal {diag}, reports identical: {identical}")


def test_10_print_summary(capsys):
    with capsys.disabled():
        print()
        for line in RESULTS:
            print(line)
