"""Acceptance suite. Each test prints one PASS/FAIL line; run with ``-s`` to see them."""

import csv
import hashlib
import io
import time

import numpy as np

from tlce.data import (
    ClassSplit,
    LabeledDataset,
    ProtocolSpec,
    SessionDataset,
    SynthSpec,
    dataset_from_bytes,
    dataset_to_bytes,
    generate_synth,
    split_sessions,
)
from tlce.ensemble import EnsembleConfig, classify, decide
from tlce.harness import evaluate, predictions_csv, run_protocol, score_sessions
from tlce.memory import RHD, TKN, ExplicitMemory, MemoryEntry, compute_prototype, memory_from_bytes, memory_to_bytes, score
from tlce.model import (
    HEAD_CE,
    HEAD_COSINE,
    HEAD_NONE,
    ArchitectureSpec,
    init_params,
    params_from_bytes,
    params_to_bytes,
)
from tlce.numerics import Tensor
from tlce.scenarios import complementary_scenario
from tlce.training import TrainConfig, ce_loss, cosine_ce_loss, meta_train_rhd, pretrain_ce, sharpening, softabs_attention, train_tkn

from conftest import analytic_gradients, central_differences, max_relative_error


def report(name, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, detail


def test_gradient_oracle():
    start = time.perf_counter()
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng(100 + i)
        d_in, d_f, d = (int(v) for v in rng.integers(2, 6, size=3))
        hidden = tuple(int(v) for v in rng.integers(2, 6, size=rng.integers(0, 3)))
        n_cls = int(rng.integers(2, 5))
        arch = ArchitectureSpec(d_in, hidden, d_f, d)
        x = rng.normal(size=(int(rng.integers(2, 7)), d_in))
        y = rng.integers(0, n_cls, size=len(x))
        for head, loss_fn in ((HEAD_CE, ce_loss), (HEAD_COSINE, cosine_ce_loss)):
            p = init_params(arch, 1000 + i, head, n_cls)
            # random biases keep tiny ReLU nets away from an all-zero embedding
            for t in p.trainable():
                if t.ndim == 1:
                    t.data = 0.5 * rng.normal(size=t.shape)
            tensors = p.trainable()

            def loss():
                return loss_fn(p, x, y)

            err = max_relative_error(analytic_gradients(loss, tensors), central_differences(loss, tensors, h=1e-5))
            worst = max(worst, err)
    elapsed = time.perf_counter() - start
    report(
        "gradient oracle",
        worst < 1e-4 and elapsed < 30,
        f"max relative error {worst:.2e} (< 1e-4) over 20 nets x 2 losses in {elapsed:.1f}s (< 30s)",
    )


# independent evaluation with mpmath at 40 digits
EPS_REFERENCE = {0.5: 0.50004539786870243, 0.0: 0.013385701848569711, 1.0: 0.99330745497794207}
EPS_PUBLISHED = {0.5: 0.5000454, 0.0: 0.0133857, 1.0: 0.9933072}


def test_sharpening_and_softabs_numerics():
    eps_err = max(abs(sharpening(c, 10.0) - v) for c, v in EPS_REFERENCE.items())
    pub_err = max(abs(sharpening(c, 10.0) - v) for c, v in EPS_PUBLISHED.items())
    rng = np.random.default_rng(0)
    sum_err = 0.0
    for _ in range(10_000):
        s = rng.uniform(-1, 1, size=int(rng.integers(2, 20)))
        sum_err = max(sum_err, abs(float(softabs_attention(s).sum()) - 1.0))
    report(
        "sharpening/softabs numerics",
        eps_err <= 1e-6 and pub_err <= 1e-6 and sum_err <= 1e-9,
        f"eps error vs reference {eps_err:.1e}, vs published {pub_err:.1e} (<= 1e-6); "
        f"softabs sum error {sum_err:.1e} on 10^4 vectors (<= 1e-9)",
    )


def test_endpoint_identities():
    rng = np.random.default_rng(1)
    arch = ArchitectureSpec(8, (12,), 10, 6)
    rhd, tkn = init_params(arch, 1), init_params(arch, 2)
    em = ExplicitMemory()
    for c in rng.permutation(50)[:12]:
        em.add(MemoryEntry(int(c), 1, rng.normal(size=6), rng.normal(size=6)))
    queries = rng.normal(size=(1000, 8))
    s_rhd, s_tkn = score(em, RHD, rhd, queries), score(em, TKN, tkn, queries)
    rhd_only, tkn_only = decide(s_rhd, em.class_ids), decide(s_tkn, em.class_ids)
    bad = 0
    for i, q in enumerate(queries):
        bad += classify(em, rhd, tkn, EnsembleConfig(1.0), q)[0] != rhd_only[i]
        bad += classify(em, rhd, tkn, EnsembleConfig(0.0), q)[0] != tkn_only[i]
    report("endpoint identities", bad == 0, f"{bad} disagreements over 1000 queries at lambda=0 and lambda=1 (need 0)")


def test_frozen_memory_invariant():
    spec = ProtocolSpec(6, 8, 2, 3, 5, seed=2)
    data = generate_synth(SynthSpec(14, 8, train_per_class=20, test_per_class=5, seed=2))
    sessions = split_sessions(data, spec)
    arch = ArchitectureSpec(8, (10,), 8, 6)
    rhd, tkn = init_params(arch, 3), init_params(arch, 4, HEAD_COSINE, 6)
    want = (rhd.digest(), tkn.digest())
    scored = score_sessions(sessions, rhd, tkn, spec)
    nets_ok = all(d == want for d in scored.digests) and (rhd.digest(), tkn.digest()) == want
    changed = sum(
        after[c] != h for before, after in zip(scored.entry_hashes, scored.entry_hashes[1:]) for c, h in before.items()
    )
    report(
        "frozen-memory invariant",
        nets_ok and changed == 0 and len(scored.digests) == 5,
        f"network hashes constant over {len(scored.digests)} sessions: {nets_ok}; changed entries: {changed}",
    )


def test_end_to_end_synthetic_protocol():
    start = time.perf_counter()
    spec = ProtocolSpec(num_base_classes=10, num_novel_classes=4, way=2, shot=5, num_sessions=3, seed=7)
    data = generate_synth(
        SynthSpec(num_classes=14, feature_dim=64, train_per_class=60, test_per_class=30,
                  cluster_std=1.0, min_center_separation=8.0, seed=7)
    )
    sessions = split_sessions(data, spec)
    base = sessions[0]
    arch = ArchitectureSpec(64, (128,), 64, 128)
    cfg = TrainConfig(learning_rate=0.01, batch_size=32, epochs=10, seed=1, momentum=0.9)
    pre = pretrain_ce(init_params(arch, 11, HEAD_CE, 10), base, cfg)
    rhd = meta_train_rhd(pre, base, TrainConfig(learning_rate=0.01, seed=2, momentum=0.9), episodes=100)
    tkn = train_tkn(init_params(arch, 12, HEAD_COSINE, 10), base, cfg)
    summary = run_protocol(sessions, rhd, tkn, EnsembleConfig(0.8), spec)
    elapsed = time.perf_counter() - start
    accs = ", ".join(f"{a:.4f}" for a in summary.weighted)
    report(
        "end-to-end synthetic protocol",
        min(summary.weighted) >= 0.90 and elapsed < 300,
        f"weighted accuracy per session [{accs}] (>= 0.90) in {elapsed:.1f}s (< 300s)",
    )


def _mean_abs_pairwise_cos(protos):
    u = protos / np.linalg.norm(protos, axis=1, keepdims=True)
    c = np.abs(u @ u.T)
    n = len(u)
    return (c.sum() - np.trace(c)) / (n * (n - 1))


def test_quasi_orthogonality_trend():
    data = generate_synth(SynthSpec(8, 64, train_per_class=60, test_per_class=40, seed=3))
    ids = data.class_ids
    base = SessionDataset(1, ids, {c: data.classes[c].train for c in ids}, {c: data.classes[c].test for c in ids})
    arch = ArchitectureSpec(64, (128,), 64, 64)
    pre = pretrain_ce(
        init_params(arch, 0, HEAD_CE, 8), base, TrainConfig(learning_rate=0.01, batch_size=32, epochs=10, momentum=0.9)
    )
    rhd = meta_train_rhd(pre, base, TrainConfig(learning_rate=0.01, seed=1, momentum=0.9), episodes=200)

    def held_out(p):
        return np.stack([compute_prototype(p, base.test[c]) for c in ids])

    before, after = _mean_abs_pairwise_cos(held_out(pre)), _mean_abs_pairwise_cos(held_out(rhd))
    report("quasi-orthogonality trend", after < before, f"mean |cos| {before:.4f} -> {after:.4f} (must decrease)")


def test_interior_lambda_superiority():
    sessions, rhd, tkn, spec = complementary_scenario(seed=0)
    scored = score_sessions(sessions, rhd, tkn, spec)
    runs = {lam: evaluate(scored, lam) for lam in np.round(np.linspace(0, 1, 11), 1)}
    rhd_novel_err = 1 - runs[1.0].reports[-1].novel_acc
    tkn_base_err = 1 - runs[0.0].reports[-1].base_acc
    ends = max(runs[0.0].final_session_acc, runs[1.0].final_session_acc)
    best = max((lam for lam in runs if 0 < lam < 1), key=lambda lam: runs[lam].final_session_acc)
    ok = rhd_novel_err >= 0.30 and tkn_base_err >= 0.30 and runs[best].final_session_acc > ends
    report(
        "interior-lambda superiority",
        ok,
        f"RHD novel error {rhd_novel_err:.3f}, TKN base error {tkn_base_err:.3f} (both >= 0.30); "
        f"best lambda={best:g} at {runs[best].final_session_acc:.4f} vs endpoints "
        f"{runs[0.0].final_session_acc:.4f}/{runs[1.0].final_session_acc:.4f}",
    )


def test_accounting_identities():
    spec = ProtocolSpec(seed=5)
    dim = 16
    data = generate_synth(SynthSpec(100, dim, train_per_class=10, test_per_class=5, min_center_separation=8.0, seed=5))
    sessions = split_sessions(data, spec)
    net = init_params(ArchitectureSpec(dim, (), dim, dim), 0)
    net.theta1[0] = (Tensor(np.eye(dim)), Tensor(np.zeros(dim)))
    net.theta2 = (Tensor(np.eye(dim)), Tensor(np.zeros(dim)))
    scored = score_sessions(sessions, net, net, spec)
    sizes = [len(h) for h in scored.entry_hashes]
    sizes_ok = sizes == [60 + 5 * (t - 1) for t in range(1, 10)]
    summary = evaluate(scored, 0.8)
    mean_ok = summary.average_acc == sum(summary.weighted) / len(summary.weighted)
    counts = {}
    for row in csv.DictReader(io.StringIO(predictions_csv(summary))):
        hit, n = counts.get(int(row["session"]), (0, 0))
        counts[int(row["session"])] = (hit + (row["true_class"] == row["predicted_class"]), n + 1)
    recount = [hit / n for _, (hit, n) in sorted(counts.items())]
    recount_ok = recount == summary.weighted and sum(recount) / len(recount) == summary.average_acc
    report(
        "accounting identities",
        sizes_ok and mean_ok and recount_ok,
        f"|EM| per session {sizes}; average equals mean: {mean_ok}; recount matches: {recount_ok}",
    )


def _random_dataset(rng):
    dim = int(rng.integers(1, 6))
    ids = [int(c) for c in rng.permutation(1000)[: int(rng.integers(0, 8))]]
    return LabeledDataset(
        {c: ClassSplit(rng.normal(size=(int(rng.integers(0, 6)), dim)), rng.normal(size=(int(rng.integers(0, 6)), dim)))
         for c in ids}
    )


def _random_params(rng):
    arch = ArchitectureSpec(
        int(rng.integers(1, 7)), tuple(int(v) for v in rng.integers(1, 7, size=rng.integers(0, 3))),
        int(rng.integers(1, 7)), int(rng.integers(1, 7)),
    )
    head = [HEAD_NONE, HEAD_CE, HEAD_COSINE][int(rng.integers(0, 3))]
    return init_params(arch, int(rng.integers(0, 2**31)), head, 0 if head == HEAD_NONE else int(rng.integers(1, 6)))


def _random_memory(rng):
    dim = int(rng.integers(1, 8))
    em = ExplicitMemory()
    for k, c in enumerate(rng.permutation(1000)[: int(rng.integers(0, 10))]):
        em.add(MemoryEntry(int(c), 1 + k // 3, rng.normal(size=dim), rng.normal(size=dim)))
    return em


def test_format_round_trips():
    rng = np.random.default_rng(9)
    failures = {"TLCD": 0, "params": 0, "memory": 0}
    for _ in range(100):
        d = _random_dataset(rng)
        raw = dataset_to_bytes(d)
        back = dataset_from_bytes(raw)
        failures["TLCD"] += not (back == d and dataset_to_bytes(back) == raw)

        p = _random_params(rng)
        raw = params_to_bytes(p)
        q = params_from_bytes(raw)
        same = all(a.data.tobytes() == b.data.tobytes() for a, b in zip(p.tensors(), q.tensors()))
        failures["params"] += not (same and params_to_bytes(q) == raw and q.spec == p.spec)

        em = _random_memory(rng)
        raw = memory_to_bytes(em)
        back = memory_from_bytes(raw)
        digest = lambda m: [hashlib.sha256(m.entry_bytes(c)).digest() for c in m.class_ids]  # noqa: E731
        failures["memory"] += not (memory_to_bytes(back) == raw and digest(back) == digest(em))
    report(
        "format round-trips",
        not any(failures.values()),
        "failures over 100 instances each: " + ", ".join(f"{k}={v}" for k, v in failures.items()),
    )
