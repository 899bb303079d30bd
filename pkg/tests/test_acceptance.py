"""Acceptance criteria. Each test records one PASS/FAIL line.

The lines are echoed in an "acceptance" section at the end of the pytest
report. Thresholds are those stated by the acceptance list; none is relaxed.
"""

import dataclasses
import math
import time

import numpy as np

from dail import model
from dail.ablation import run_ablation, summarize
from dail.checkpoint import load_checkpoint, save_checkpoint, state_from_checkpoint, state_to_checkpoint
from dail.cli import run_command
from dail.config import RunConfig
from dail.datagen import GenConfig, generate_corpus
from dail.evaluation import best_threshold
from dail.gradcheck import MARGINS, check_problem, tiny_problem
from dail.losses import MarginSpec, dataset_aware_loss, softmax_loss
from dail.numerics import Prng
from dail.registry import ClassTable, all_ones_mask, crossing_dropout_mask, dataset_mask
from dail.trainer import LOSS_MODES, TrainConfig, train

SMALL_TRAIN = dict(total_steps=80, stage2_start_step=30, lr_decay_steps=(50,), batch_size=16, hidden=(8,),
                   embed_dim=4, log_every=10)


def _small_corpus(k=2, rho=0.5, seed=0):
    return generate_corpus(GenConfig(num_datasets=k, identities_per_dataset=8, samples_per_identity=8,
                                     input_dim=6, overlap_fraction=rho if k > 1 else 0.0, seed=seed))


def _max_diff(a, b, keys=None):
    a, b = a.named_arrays(), b.named_arrays()
    keys = keys or [k for k in a if not k.startswith("domain.")]
    return max(float(np.max(np.abs(a[k] - b[k]))) for k in keys)


def test_criterion_01_mask_partition(verdict):
    rng = np.random.default_rng(0)
    bad = 0
    for _ in range(100):
        K = int(rng.integers(1, 6))
        counts = rng.integers(1, 7, size=K)
        dataset_of = rng.permutation(np.repeat(np.arange(K), counts))
        table = ClassTable(dataset_of, K)
        masks = np.stack([dataset_mask(table, k) for k in range(K)])
        bad += not (np.all(masks.sum(axis=0) == 1) and np.array_equal(masks.sum(axis=1), counts))
    verdict(1, bad == 0, f"100 random class tables, {bad} with a non-partitioning mask")


def test_criterion_02_single_dataset_equivalence(verdict):
    rng = np.random.default_rng(1)
    z = rng.normal(size=(16, 9)) * 5
    t = rng.integers(0, 9, size=16)
    table = ClassTable(np.zeros(9, int), 1)
    loss_gap = abs(dataset_aware_loss(z, t, dataset_mask(table, np.zeros(16, int))).loss - softmax_loss(z, t).loss)
    corpus = _small_corpus(k=1)
    a = train(TrainConfig(loss_mode="naive", **SMALL_TRAIN), corpus)
    b = train(TrainConfig(loss_mode="dataset_aware", **SMALL_TRAIN), corpus)
    traj_gap = _max_diff(a.params, b.params)
    hist_gap = float(np.max(np.abs(a.loss_history - b.loss_history)))
    ok = loss_gap <= 1e-12 and traj_gap <= 1e-12 and hist_gap <= 1e-12
    verdict(2, ok, f"K=1 loss gap {loss_gap:.1e}, parameter gap {traj_gap:.1e}, loss-curve gap {hist_gap:.1e} "
                   "(tol 1e-12)")


def test_criterion_03_gradient_sparsity(verdict):
    corpus = generate_corpus(GenConfig(num_datasets=3, identities_per_dataset=10, samples_per_identity=4,
                                       input_dim=6, overlap_fraction=0.5, seed=3))
    table = corpus.class_table
    rng = np.random.default_rng(3)
    nonzero_inactive = nonzero_overlap = overlap_checked = 0
    for b in range(50):
        params = model.init_params(Prng((b, 0)), 6, [8], 4, corpus.num_classes, 3, MarginSpec(), 0.1)
        idx = rng.choice(len(corpus), size=12, replace=False)
        X, y, k = corpus.features[idx], corpus.local_class[idx], corpus.dataset_id[idx]
        m = dataset_mask(table, k)
        res = model.backward(params, model.forward(params, X, y), y, k, m, 2)
        nonzero_inactive += int(np.count_nonzero(res.grads["class.w"][~m.any(axis=0)]))
        # per sample: the same person's label in another dataset gets no gradient
        for i in range(len(idx)):
            other = np.flatnonzero((corpus.identity_of_class == corpus.global_identity[idx[i]])
                                   & (table.dataset_of != k[i]))
            if other.size == 0:
                continue
            one = model.backward(params, model.forward(params, X[i:i + 1], y[i:i + 1]), y[i:i + 1], k[i:i + 1],
                                 m[i:i + 1], 2)
            nonzero_overlap += int(np.count_nonzero(one.grads["class.w"][other]))
            overlap_checked += other.size
    ok = nonzero_inactive == 0 and nonzero_overlap == 0 and overlap_checked > 0
    verdict(3, ok, f"50 batches: {nonzero_inactive} non-zero inactive class-weight entries; "
                   f"{overlap_checked} other-dataset labels of the same person, {nonzero_overlap} non-zero entries")


def test_criterion_04_gradient_checks(verdict):
    worst, worst_at = 0.0, None
    for mode in LOSS_MODES:
        for mname in ("linear", "arcface", "combined"):
            prob = tiny_problem(0, mode, MARGINS[mname])
            for stage in (1, 2):
                for name, err in check_problem(prob, stage, h=1e-6).items():
                    if err > worst:
                        worst, worst_at = err, (mode, mname, stage, name)
    code = run_command(["gradcheck"])
    ok = worst < 1e-5 and code == 0
    verdict(4, ok, f"max relative error {worst:.2e} at {worst_at} (tol 1e-5); dail gradcheck exit {code}")


def test_criterion_05_grl_semantics(verdict):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(7, 5))
    up = rng.normal(size=(7, 5))
    fwd_ok = model.grl_forward(x).tobytes() == x.tobytes()
    bwd_ok = all(np.array_equal(model.grl_backward(up, lam), -lam * up) for lam in (0.0, 0.1, 1.0, 3.7))
    corpus = _small_corpus()
    base = TrainConfig(loss_mode="dataset_aware_grl", lam=0.0, **SMALL_TRAIN)
    stage2 = train(dataclasses.replace(base, stage2_start_step=0), corpus)
    stage1 = train(dataclasses.replace(base, stage2_start_step=base.total_steps), corpus)
    gap = _max_diff(stage2.params, stage1.params)
    ok = fwd_ok and bwd_ok and gap <= 1e-12
    verdict(5, ok, f"forward identity {fwd_ok}, backward = -lambda*upstream {bwd_ok}, "
                   f"lambda=0 stage-2 vs stage-1 gap on embedder/class head {gap:.1e} (tol 1e-12)")


def test_criterion_06_crossing_dropout(verdict):
    table = ClassTable(np.array([0, 0, 0, 1, 1, 2, 2, 2, 2, 2]), 3)
    k = np.array([0, 1, 2, 1, 0])
    p0 = np.array_equal(crossing_dropout_mask(table, k, 0.0, Prng(1)), dataset_mask(table, k))
    p1 = np.array_equal(crossing_dropout_mask(table, k, 1.0, Prng(1)), all_ones_mask(table, len(k)))
    # 10^6 cross-dataset draws: 1000 rows of dataset 0, each with 1000 foreign classes
    big = ClassTable(np.concatenate([np.zeros(10, int), np.ones(1000, int)]), 2)
    m = crossing_dropout_mask(big, np.zeros(1000, int), 0.01, Prng(6))
    frac = float(m[:, 10:].mean())
    tol = 3 * math.sqrt(0.01 * 0.99 / 1e6)
    own_ok = bool(m[:, :10].all())
    ok = p0 and p1 and own_ok and abs(frac - 0.01) <= tol
    verdict(6, ok, f"p=0 matches dataset mask {p0}, p=1 all ones {p1}; p=0.01 active fraction {frac:.6f} "
                   f"over 1e6 draws (allowed 0.01 +- {tol:.2e})")


def _means(rows):
    return {s["mode"]: s for s in summarize(rows)}


def test_criterion_07_ablation_direction(verdict):
    cfg = RunConfig()
    start = time.perf_counter()
    rows = run_ablation(cfg, 5, modes=("naive", "dataset_aware", "dataset_aware_grl"))
    elapsed = time.perf_counter() - start
    s = _means(rows)
    acc = {m: 100 * s[m]["verification_accuracy_mean"] for m in s}
    probe = {m: 100 * s[m]["domain_probe_accuracy_mean"] for m in s}
    da_gain = acc["dataset_aware"] - acc["naive"]
    grl_gap = acc["dataset_aware_grl"] - acc["dataset_aware"]
    probe_drop = probe["dataset_aware"] - probe["dataset_aware_grl"]
    ok = da_gain >= 2.0 and grl_gap >= -0.5 and probe_drop >= 10.0 and elapsed <= 600
    verdict(7, ok, f"acc naive {acc['naive']:.2f} / DA {acc['dataset_aware']:.2f} / DA+GRL "
                   f"{acc['dataset_aware_grl']:.2f} %: DA-naive {da_gain:+.2f} (>= 2), DA+GRL-DA {grl_gap:+.2f} "
                   f"(>= -0.5); probe DA {probe['dataset_aware']:.1f} vs DA+GRL {probe['dataset_aware_grl']:.1f} %, "
                   f"drop {probe_drop:.1f} (>= 10); {elapsed:.0f} s (<= 600)")


def test_criterion_08_overlap_healing(verdict):
    cfg = RunConfig()
    cfg.gen.overlap_fraction = 0.5
    rows = run_ablation(cfg, 5, modes=("naive", "dataset_aware"))
    s = _means(rows)
    naive = s["naive"]["overlap_same_id_cosine_mean"]
    da = s["dataset_aware"]["overlap_same_id_cosine_mean"]
    verdict(8, da - naive >= 0.05, f"rho=0.5 same-person cross-dataset cosine naive {naive:.3f}, DA {da:.3f}, "
                                   f"difference {da - naive:+.3f} (>= 0.05)")


def test_criterion_09_determinism_and_resume(verdict, tmp_path):
    corpus = _small_corpus(seed=9)
    cfg = TrainConfig(loss_mode="dataset_aware_grl_cd", cd_p=0.2, **SMALL_TRAIN)
    strip = lambda ms: [{k: v for k, v in m.items() if k != "wall_ms"} for m in ms]  # noqa: E731
    a, b = train(cfg, corpus), train(cfg, corpus)
    same_metrics = repr(strip(a.metrics)).encode() == repr(strip(b.metrics)).encode()
    half = train(cfg, corpus, until_step=37)
    save_checkpoint(tmp_path / "half.bin", state_to_checkpoint(half.state, cfg))
    state, cfg2 = state_from_checkpoint(load_checkpoint(tmp_path / "half.bin"))
    resumed = train(cfg2, corpus, state=state)
    keys = list(a.params.named_arrays())
    gap = _max_diff(a.params, resumed.params, keys)
    ok = same_metrics and gap <= 1e-12
    verdict(9, ok, f"repeat run metrics byte-identical {same_metrics}; resume-from-checkpoint gap {gap:.1e} "
                   "(tol 1e-12)")


def _brute_force(sims, same):
    return max(float(np.mean((sims >= t) == same)) for t in [-np.inf, np.inf, *sims])


def test_criterion_10_verification_metric(verdict):
    rng = np.random.default_rng(10)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(2, 60))
        sims = rng.uniform(-1, 1, size=n)
        if rng.random() < 0.5:
            sims = np.round(sims, 1)
        same = rng.random(n) < rng.uniform(0.1, 0.9)
        same[0], same[1] = True, False
        acc, _ = best_threshold(sims, same)
        mismatches += acc != _brute_force(sims, same)
    verdict(10, mismatches == 0, f"200 random pair sets, {mismatches} mismatches against the brute-force oracle")
