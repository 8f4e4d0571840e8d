"""Exit criteria for the desk-scale build, one test per criterion.

Each test appends a PASS/FAIL line that is printed in the pytest terminal
summary. Tolerances and runtime budgets are fixed here, not tuned.
"""

import math
import os
import time

import numpy as np
import pytest

from m2oe import tensor as T
from m2oe.config import ModelConfig
from m2oe.data import (CLASSIFICATION, REGRESSION, Dataset, PeptideRecord, build_chain_graph,
                       load_csv_dataset, normalize_adjacency, split_dataset, split_sizes,
                       synth_dataset, write_csv_dataset)
from m2oe.encoders import EncoderLayer, GraphEncoder
from m2oe.gradcheck import grad_check
from m2oe.model import M2oE, compute_metrics, evaluate, fit
from m2oe.rng import RngState
from m2oe.scmoe import (CrossAttention, ExpertBank, Router, SCMoEBlock, importance_loss,
                        load_balance_loss, moe_forward, moe_forward_dense, route_tokens)
from m2oe.tensor import Tensor

from conftest import ACCEPTANCE_LINES, op_grad_error


def record(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_equation_oracles():
    start = time.perf_counter()
    errs = {
        "load([40,0,0,0])": abs(load_balance_loss([40.0, 0.0, 0.0, 0.0]).item() - 0.75),
        "importance([2,0],0.1)": abs(importance_loss([2.0, 0.0], 0.1).item() - 0.1),
        "softmax([0,ln3])": np.abs(T.softmax_masked([0.0, math.log(3)]).values - [0.25, 0.75]).max(),
    }
    path = [[0, 1, 0], [1, 0, 1], [0, 1, 0]]
    deg = [2, 3, 2]
    oracle = np.array([[(path[i][j] + (i == j)) / math.sqrt(deg[i] * deg[j]) for j in range(3)]
                       for i in range(3)])
    errs["normalize_adjacency(path3)"] = np.abs(normalize_adjacency(path) - oracle).max()
    elapsed = time.perf_counter() - start
    ok = max(errs.values()) <= 1e-9 and elapsed < 1.0
    record("equation oracles", ok, f"max abs err {max(errs.values()):.1e} (tol 1e-9), {elapsed:.3f}s (<1s)")


def _op_cases():
    r = np.random.default_rng(0)
    x34 = r.standard_normal((3, 4))
    x34 = np.where(np.abs(x34) < 0.05, 0.1, x34)
    return {
        "matmul": (T.matmul, [r.standard_normal((2, 3)), r.standard_normal((3, 4))]),
        "softmax_masked": (lambda a: T.softmax_masked(a, np.array([1, 0, 1, 1], bool)), [x34]),
        "leaky_relu": (lambda a: T.leaky_relu(a, 0.01), [x34]),
        "softplus": (T.softplus, [x34]),
        "sigmoid": (T.sigmoid, [x34]),
        "bce": (lambda p: T.bce(np.array([1.0, 0.0, 1.0]), T.sigmoid(p)), [r.standard_normal(3)]),
        "mse": (lambda p: T.mse(np.array([1.0, 0.0, 2.0]), p), [r.standard_normal(3)]),
        "layer_norm": (T.layer_norm, [x34, r.standard_normal(4), r.standard_normal(4)]),
        "embedding": (lambda t: T.embedding(t, np.array([[0, 2], [2, 1]])), [r.standard_normal((3, 4))]),
        "concat": (lambda a, b: T.concat([a, b]), [x34, x34 + 1]),
        "scatter_rows": (lambda a: T.scatter_rows(a, np.array([2, 0]), 4), [r.standard_normal((2, 3))]),
        "sqrt": (lambda a: T.sqrt(a * a + 0.5), [x34]),
        "div": (lambda a, b: a / (b * b + 1.0), [x34, x34[0]]),
    }


def _module_cases():
    r = np.random.default_rng(1)
    mask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], bool)
    x = Tensor(r.standard_normal((2, 4, 8)), requires_grad=True)
    layer = EncoderLayer(RngState(1), 8, 2, 0.01, std=0.3)
    gcn = GraphEncoder(RngState(2), 8, 2, 0.01, std=0.5)
    from m2oe.data import encode_records
    batch = encode_records([PeptideRecord("a", "ACDKE", 0.0), PeptideRecord("b", "WY", 0.0)], 5)
    cross = CrossAttention(RngState(3), 8, std=0.5)
    router = Router(RngState(4), 8, 4, 2, std=0.8)
    bank = ExpertBank(RngState(4), 8, 4, 4, 0.01, std=0.6)
    block = SCMoEBlock(RngState(5), 8, std=0.5)
    tokens = Tensor(r.standard_normal((6, 8)), requires_grad=True)
    w = r.standard_normal((2, 4, 8))

    def moe_loss():
        out = route_tokens(tokens, router, training=True, rng=RngState(7))
        return (T.sum(moe_forward(tokens, out, bank) * w[0, :, :4].sum())
                + load_balance_loss(out.soft_mass) + importance_loss(out.soft_mass, 0.1))

    def block_loss():
        a, b, aux = block(x, x * 0.5, mask, mask)
        return T.sum(a * w) + T.sum(b * w[::-1]) + aux["seq"].load + aux["gra"].importance

    return {
        "attention_block": (lambda: T.sum(layer.attention_block(x, mask) * w),
                            {"x": x, **dict(layer.attn.named_parameters())}),
        "ffn_block": (lambda: T.sum(layer.ffn_block(x) * w), {"x": x, **dict(layer.ffn.named_parameters())}),
        "graph_encode": (lambda: T.sum(gcn(batch.ids, batch.norm_adj) * w[:, :1, :1]),
                         dict(gcn.named_parameters())),
        "cross_attention": (lambda: sum(T.sum(o * w) for o in cross(x, x * 2.0, mask, mask)),
                            {"x": x, **dict(cross.named_parameters())}),
        "route+moe+aux (train, fixed noise)": (moe_loss, {"tokens": tokens, **dict(router.named_parameters()),
                                                          **dict(bank.named_parameters())}),
        "scmoe_block": (block_loss, {"x": x, **dict(block.named_parameters())}),
    }


def test_gradient_suite():
    start = time.perf_counter()
    worst = {}
    for name, (fn, arrays) in _op_cases().items():
        worst[name] = op_grad_error(fn, arrays, eps=1e-5)
    for name, (loss, params) in _module_cases().items():
        worst[name] = max(grad_check(loss, params, eps=1e-5).values())
    model = M2oE(ModelConfig(d=8, heads=2, layers=2, max_len=6, init_std=0.3, seed=3))
    batch = model.encode([PeptideRecord("a", "KRKAC", 1.0), PeptideRecord("b", "GWLFMH", 0.0)])
    full = grad_check(lambda: model.loss(batch)[0], dict(model.named_parameters()), eps=1e-4)
    worst["full model (eval routing, 2 samples)"] = max(full.values())
    elapsed = time.perf_counter() - start
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err < 1e-3 and elapsed < 120
    record("gradient suite", ok, f"{len(worst)} checks, worst {err:.1e} at {name} (tol 1e-3), "
                                 f"{len(full)} param groups in full model, {elapsed:.0f}s (<120s)")


def test_router_invariants():
    start = time.perf_counter()
    r = np.random.default_rng(2024)
    x = r.standard_normal((1000, 16))
    bad = []
    for c, k in [(4, 1), (4, 2), (4, 4), (3, 2)]:
        router = Router(RngState(c * 10 + k), 16, c, k, std=1.0)
        bank = ExpertBank(RngState(k), 16, 8, c, 0.01, std=0.5)
        for training in (False, True):
            out = route_tokens(x, router, training, RngState(5))
            g = out.gates.values
            if not np.all((g != 0).sum(1) <= k):
                bad.append(f"sparsity C={c} k={k}")
            if np.abs(g.sum(1) - 1).max() > 1e-9:
                bad.append(f"gate sum C={c} k={k}")
            if np.abs(moe_forward(x, out, bank).values - moe_forward_dense(x, out, bank)).max() > 1e-9:
                bad.append(f"dense oracle C={c} k={k}")
        again = route_tokens(x, router, False)
        first = route_tokens(x, router, False)
        if not (np.array_equal(again.indices, first.indices)
                and np.array_equal(again.gates.values, first.gates.values)):
            bad.append(f"eval determinism C={c} k={k}")
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 30
    record("router invariants", ok, f"1000 tokens x 4 (C,k) x train/eval, violations {bad or 'none'}, "
                                    f"{elapsed:.1f}s (<30s)")


@pytest.mark.slow
def test_overfit_synthetic_classification():
    start = time.perf_counter()
    ds = synth_dataset(64, 0, CLASSIFICATION)
    config = ModelConfig(seed=0)
    result = fit(ds, ds, config)
    final_acc = evaluate(result.model, ds).acc
    first_hit = next((h.epoch for h in result.history if h.train_metrics["acc"] >= 0.95), None)
    replay = fit(ds, ds, config.replace(epochs=10))
    deterministic = [h.as_dict() for h in replay.history] == [h.as_dict() for h in result.history[:10]]
    elapsed = time.perf_counter() - start
    ok = final_acc >= 0.95 and deterministic and elapsed < 300
    record("overfit", ok, f"train ACC {final_acc:.3f} after 200 epochs (>=0.95 first at epoch {first_hit}), "
                          f"replay identical={deterministic}, {elapsed:.0f}s (<300s)")


@pytest.mark.slow
def test_balance_losses_reduce_count_cv():
    start = time.perf_counter()
    cvs = {True: [], False: []}
    for seed in range(3):
        ds = synth_dataset(64, seed, CLASSIFICATION)
        for enabled in (True, False):
            cfg = ModelConfig(seed=seed) if enabled else ModelConfig(seed=seed, omega_imp=0.0, load_weight=0.0)
            cvs[enabled].append(fit(ds, ds, cfg).history[-1].count_cv)
    on, off = float(np.median(cvs[True])), float(np.median(cvs[False]))
    elapsed = time.perf_counter() - start
    ok = on <= off and elapsed < 900
    record("balance effect", ok, f"median epoch-end count CV {on:.3f} (balanced) vs {off:.3f} (disabled), "
                                 f"{elapsed:.0f}s (<900s)")


ABLATION_EPOCHS = 60


@pytest.mark.slow
def test_ablation_direction():
    start = time.perf_counter()
    mse = {"full": [], "baseline": []}
    for seed in range(3):
        train, val, _ = split_dataset(synth_dataset(512, seed, REGRESSION), seed=seed)
        for variant, flags in (("full", {}), ("baseline", dict(use_cra=False, use_moe=False))):
            cfg = ModelConfig(task=REGRESSION, seed=seed, epochs=ABLATION_EPOCHS, **flags)
            mse[variant].append(evaluate(fit(train, val, cfg).best_model(), val).mse)
    full, base = float(np.median(mse["full"])), float(np.median(mse["baseline"]))
    elapsed = time.perf_counter() - start
    ok = full <= 1.05 * base and elapsed < 1800
    record("ablation direction", ok, f"median val MSE full {full:.2e} vs no-CRA/no-MoE {base:.2e} "
                                     f"(need <= 1.05x), {elapsed:.0f}s (<1800s)")


def test_metrics_oracle():
    m = compute_metrics([0.0, 1.0, 2.0], [0.0, 1.0, 1.0], REGRESSION)
    err = max(abs(m.mae - 1 / 3), abs(m.mse - 1 / 3), abs(m.r2 - 0.5))
    record("metrics oracle", err <= 1e-12, f"MAE {m.mae:.15f} MSE {m.mse:.15f} R2 {m.r2:.15f}, err {err:.1e}")


def test_data_protocol(tmp_path):
    path = tmp_path / "amp.csv"
    write_csv_dataset(synth_dataset(9321, 11, CLASSIFICATION), path)
    loaded = len(load_csv_dataset(path, CLASSIFICATION))
    bad = []
    for n in range(3, 1001):
        ds = Dataset([PeptideRecord(str(i), "A", 0.0) for i in range(n)], CLASSIFICATION)
        sizes = tuple(len(p) for p in split_dataset(ds, seed=n))
        if sizes != (math.floor(0.8 * n), math.floor(0.1 * n), n - math.floor(0.8 * n) - math.floor(0.1 * n)):
            bad.append(n)
    ok = loaded == 9321 and not bad and split_sizes(9321) == (7456, 932, 933)
    record("data protocol", ok, f"loaded {loaded} of 9321 rows; floor-rule violations for n in 3..1000: "
                                f"{bad[:5] or 'none'}")


AP_DIR = os.environ.get("M2OE_AP_DIR")


@pytest.mark.skipif(not AP_DIR, reason="optional stretch: set M2OE_AP_DIR to a directory with "
                                       "train.csv/val.csv/test.csv of the AP corpus")
def test_optional_ap_corpus():
    train = load_csv_dataset(os.path.join(AP_DIR, "train.csv"), REGRESSION)
    val = load_csv_dataset(os.path.join(AP_DIR, "val.csv"), REGRESSION)
    test = load_csv_dataset(os.path.join(AP_DIR, "test.csv"), REGRESSION)
    max_len = max(len(r.sequence) for ds in (train, val, test) for r in ds)
    cfg = ModelConfig(task=REGRESSION, max_len=max_len, epochs=int(os.environ.get("M2OE_AP_EPOCHS", 50)))
    r2 = evaluate(fit(train, val, cfg).best_model(), test).r2
    record("optional AP stretch", r2 >= 0.90, f"test R2 {r2:.3f} (target >= 0.90)")
