"""Acceptance suite: one test per exit criterion, each printing a
PASS/FAIL line at its stated tolerance. Shared training runs are
session-scoped so the whole file stays well inside the runtime budgets."""

import json
import math

import numpy as np
import pytest

from modgap.cli import main as cli_main
from modgap.experiments import (
    EvalConfig,
    final_metrics,
    run_gap_gradient_profile,
    run_gap_shift_sweep,
    run_sphere_sim,
)
from modgap.losses import (
    LossConfig,
    MultimodalBatch,
    check_gradient,
    infonce_directional,
    infonce_symmetric,
    loss_atp,
    loss_clgap,
    loss_cu,
    loss_gap,
    loss_uniform_batch,
)
from modgap.metrics import (
    angular_value,
    cos_tp,
    modality_gap,
    recall_at_k,
    scatter_decomposition_check,
)
from modgap.numerics import make_rng, normalize_rows
from modgap.synthdata import SphereSimConfig, SyntheticDatasetSpec, generate_dataset
from modgap.trainer import TrainConfig, backward, encode_dataset, forward, init_encoder, train

GRAD_TOL = 1e-4
FD_H = 1e-5

ACCEPTANCE_SEED = 42
DATASET_SPEC = SyntheticDatasetSpec(
    num_classes=10, samples_per_class=200, latent_dim=8,
    modality_dims=[24, 24, 24], noise_sigma=0.05, cone_offset=1.0, seed=7,
)


def report(criterion: str, ok: bool, detail: str = ""):
    tag = "PASS" if ok else "FAIL"
    print(f"[acceptance] {criterion}: {tag}" + (f" ({detail})" if detail else ""))
    assert ok, f"{criterion}: {detail}"


@pytest.fixture(scope="session")
def dataset():
    return generate_dataset(DATASET_SPEC)


def _train(dataset, variant, epochs=25, switch=10):
    cfg = TrainConfig(variant=variant, epochs=epochs, batch_size=256,
                      learning_rate=1e-3, seed=ACCEPTANCE_SEED,
                      switch_epoch=switch, loss=LossConfig(tau=0.07))
    params, timeline = train(dataset, cfg)
    return params, timeline, final_metrics(params, dataset)


@pytest.fixture(scope="session")
def run_clip_ft(dataset):
    return _train(dataset, "clip_ft")


@pytest.fixture(scope="session")
def run_ours(dataset):
    return _train(dataset, "ours")


def random_unit_batch(rng, m, n, d, labels=False):
    mats = [normalize_rows(rng.normal(size=(n, d))) for _ in range(m)]
    lab = rng.integers(0, 3, size=n) if labels else None
    return MultimodalBatch(mats, lab)


# ---------------------------------------------------------------------------
# 1. gradient correctness

def test_criterion_1_gradient_correctness():
    rng = make_rng(100)
    cases = {
        "infonce_directional": lambda b: infonce_directional(
            b.embeddings[0], b.embeddings[1], 0.3),
        "infonce_symmetric": lambda b: infonce_symmetric(
            b, LossConfig(tau=0.3, tau_mode="learnable")),
        "loss_atp": lambda b: loss_atp(b, 0),
        "loss_cu": loss_cu,
        "loss_gap": lambda b: loss_gap(b, LossConfig(tau=0.3, lambda1=0.8,
                                                     lambda2=1.2)),
        "loss_clgap": lambda b: loss_clgap(b, LossConfig(tau=0.3, lambda1=0.8,
                                                         lambda2=1.2)),
        "loss_uniform_baseline": loss_uniform_batch,
    }
    worst = {}
    for name, fn in cases.items():
        w = 0.0
        for _ in range(100):
            m = int(rng.integers(2, 4))
            n = int(rng.integers(2, 6))
            d = int(rng.integers(2, 5))
            batch = random_unit_batch(rng, m, n, d)
            if name == "infonce_symmetric":
                res = fn(batch)
                rep = check_gradient(
                    fn, batch, h=FD_H,
                    tau_fn=lambda t: infonce_symmetric(
                        batch, LossConfig(tau=t, tau_mode="learnable")).value,
                    tau0=0.3, tau_grad=res.tau_grad)
                w = max(w, rep.max_rel_err, rep.tau_rel_err)
            else:
                w = max(w, check_gradient(fn, batch, h=FD_H).max_rel_err)
        worst[name] = w

    # MLP backward: finite differences on every parameter
    w_mlp = 0.0
    for _ in range(100):
        params = init_encoder([3, 5, 2], "relu" if rng.random() < 0.5 else "tanh", rng)
        x = rng.normal(size=(4, 3))
        g_up = rng.normal(size=(4, 2))
        w_g, b_g = backward(params, x, g_up)
        for arr, grad in zip(params.weights + params.biases, w_g + b_g):
            flat, gflat = arr.ravel(), grad.ravel()
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + FD_H
                fp = float((forward(params, x) * g_up).sum())
                flat[idx] = orig - FD_H
                fm = float((forward(params, x) * g_up).sum())
                flat[idx] = orig
                fd = (fp - fm) / (2 * FD_H)
                rel = abs(gflat[idx] - fd) / max(abs(gflat[idx]), abs(fd), 1e-6)
                w_mlp = max(w_mlp, rel)
    worst["mlp_backward"] = w_mlp

    bad = {k: v for k, v in worst.items() if v > GRAD_TOL}
    report("criterion 1 (gradient correctness)", not bad,
           f"max rel err {max(worst.values()):.2e}")


# ---------------------------------------------------------------------------
# 2/3. sphere simulation

def test_criterion_2_sphere_minima():
    clip = run_sphere_sim(SphereSimConfig(delta_deg=120.0,
                                          loss_variant="clip_only"))
    ours = run_sphere_sim(SphereSimConfig(delta_deg=120.0, loss_variant="clgap"))
    ok = 57.0 <= clip.argmin_theta <= 63.0 and 0.0 <= ours.argmin_theta <= 3.0
    report("criterion 2 (sphere minima)", ok,
           f"clip argmin {clip.argmin_theta:.0f} deg, "
           f"combined argmin {ours.argmin_theta:.0f} deg")


def test_criterion_3_sphere_gradient_profile():
    res = run_gap_gradient_profile(SphereSimConfig(delta_deg=120.0,
                                                   loss_variant="clgap"))
    small = res.thetas <= 5.0
    ratio = float((res.grad_matched[small] / res.grad_mismatched[small]).max())
    at_delta = int(np.argmin(np.abs(res.thetas - 120.0)))
    m, x = res.grad_matched[at_delta], res.grad_mismatched[at_delta]
    factor = max(m / x, x / m)
    ok = ratio <= 0.1 and factor <= 2.0
    report("criterion 3 (gradient profile)", ok,
           f"ratio(theta<=5) {ratio:.4f}, factor@delta {factor:.3f}")


# ---------------------------------------------------------------------------
# 4/5. gap-shift sweeps

def test_criterion_4_exact_ranking_invariance(run_clip_ft, dataset):
    params, _, _ = run_clip_ft
    full = encode_dataset(params, dataset.inputs, dataset.labels)
    res = run_gap_shift_sweep(full, [0.0, 0.25, 0.5, 0.75, 1.0],
                              renormalize=False, eval_cfg=EvalConfig())
    col_m2n = [r.r1_m2n for r in res.rows]
    col_n2m = [r.r1_n2m for r in res.rows]
    ok = len(set(col_m2n)) == 1 and len(set(col_n2m)) == 1
    # also on an arbitrary random labeled batch
    rng = make_rng(4)
    rand = random_unit_batch(rng, 2, 20, 5, labels=True)
    res2 = run_gap_shift_sweep(rand, [0.0, 0.5, 1.3], renormalize=False,
                               eval_cfg=EvalConfig(knn_k=3))
    ok = ok and len({r.r1_m2n for r in res2.rows}) == 1
    ok = ok and len({r.r1_n2m for r in res2.rows}) == 1
    report("criterion 4 (exact ranking invariance)", ok,
           f"r1 columns {sorted(set(col_m2n))}, {sorted(set(col_n2m))}")


def test_criterion_5_gap_shift_clustering_trend(run_clip_ft, dataset):
    params, _, _ = run_clip_ft
    full = encode_dataset(params, dataset.inputs, dataset.labels)
    targets = [0.0, 0.25, 0.5, 0.75, 1.0]
    res = run_gap_shift_sweep(full, targets, renormalize=False,
                              eval_cfg=EvalConfig())
    v = {r.target_gap: r.v_measure for r in res.rows}
    ok = all(v[0.0] >= v[t] for t in targets if t >= 0.5)
    ok = ok and (v[0.0] - v[1.0] >= 0.02)
    report("criterion 5 (gap-shift clustering trend)", ok,
           "V " + " ".join(f"{t}:{v[t]:.4f}" for t in targets))


# ---------------------------------------------------------------------------
# 6/7/8. training trends

def test_criterion_6_training_comparison(run_clip_ft, run_ours):
    _, _, ft = run_clip_ft
    _, _, ours = run_ours
    ok = ours["gap_0_1"] <= 0.5 * ft["gap_0_1"]
    ok = ok and ours["costp_0_1"] > ft["costp_0_1"]
    ok = ok and ours["v_measure"] >= ft["v_measure"]
    ok = ok and abs(ours["r1_mean"] - ft["r1_mean"]) <= 0.05
    report("criterion 6 (training comparison)", ok,
           f"gap {ours['gap_0_1']:.3f} vs {ft['gap_0_1']:.3f}, "
           f"costp {ours['costp_0_1']:.3f} vs {ft['costp_0_1']:.3f}, "
           f"V {ours['v_measure']:.3f} vs {ft['v_measure']:.3f}, "
           f"dR1 {abs(ours['r1_mean'] - ft['r1_mean']):.4f}")


def test_criterion_7_collapse_without_centroid_uniformity(dataset, run_ours):
    _, _, atp = _train(dataset, "atp_only")
    _, _, ours = run_ours
    av_atp = max(atp[f"av_{m}"] for m in range(3))
    av_ours = max(ours[f"av_{m}"] for m in range(3))
    ok = av_atp > av_ours and atp["r1_mean"] < ours["r1_mean"]
    report("criterion 7 (collapse without uniformity)", ok,
           f"AV {av_atp:.3f} vs {av_ours:.3f}, "
           f"R1 {atp['r1_mean']:.3f} vs {ours['r1_mean']:.3f}")


def test_criterion_8_sparsification_recreates_gap(dataset):
    switch = 10
    _, timeline, _ = _train(dataset, "sparsify_then_clip", epochs=20,
                            switch=switch)
    gap_at_switch = timeline[switch - 1].gaps[(0, 1)]
    gap_final = timeline[-1].gaps[(0, 1)]
    ok = gap_final > gap_at_switch + 0.01
    report("criterion 8 (gap recreated after sparsification)", ok,
           f"gap {gap_at_switch:.4f} -> {gap_final:.4f}")


# ---------------------------------------------------------------------------
# 9. reduction identities

FAST_CONFIG = {
    "dataset": {"num_classes": 3, "samples_per_class": 8, "latent_dim": 4,
                "modality_dims": [6, 5], "noise_sigma": 0.05,
                "cone_offset": 0.5, "seed": 3},
    "loss": {"variant": "clip_ft", "tau": 0.07},
    "train": {"epochs": 2, "batch_size": 8, "seed": 5},
    "eval": {"knn_k": 3},
}


def test_criterion_9_reduction_identities(tmp_path):
    rng = make_rng(9)
    ok = True
    for _ in range(20):
        batch = random_unit_batch(rng, 2, 6, 4)
        cfg = LossConfig(tau=0.07, lambda1=0.0, lambda2=0.0)
        a = loss_clgap(batch, cfg)
        b = infonce_symmetric(batch, cfg)
        ok = ok and abs(a.value - b.value) <= 1e-12
        ok = ok and all((x == y).all() for x, y in zip(a.grads, b.grads))

    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(FAST_CONFIG))
    assert cli_main(["train", "--config", str(cfg_path), "--out",
                     str(tmp_path / "ft")]) == 0
    doc = json.loads(json.dumps(FAST_CONFIG))
    doc["loss"]["variant"] = "ours"
    cfg2 = tmp_path / "cfg2.json"
    cfg2.write_text(json.dumps(doc))
    assert cli_main(["ablate", "--config", str(cfg2), "--lambda1", "0",
                     "--lambda2", "0", "--out", str(tmp_path / "grid")]) == 0
    ft_bytes = (tmp_path / "ft" / "timeline.csv").read_bytes()
    cell_bytes = (tmp_path / "grid" / "cell_0p0_0p0" / "timeline.csv").read_bytes()
    ok = ok and ft_bytes == cell_bytes
    report("criterion 9 (reduction identities)", ok,
           "zero-weight combined loss == contrastive; zero ablation cell "
           "byte-equal to fixed-temperature run")


# ---------------------------------------------------------------------------
# 10. scatter decomposition

def test_criterion_10_scatter_decomposition():
    rng = make_rng(10)
    ok = True
    for _ in range(20):
        n, d = 4, 9
        z = rng.normal(size=(n, d))
        mu = rng.normal(size=(n, d))
        dev = z - mu
        delta = rng.normal(size=d)
        q, _ = np.linalg.qr(dev.T)
        delta_perp = delta - q @ (q.T @ delta)
        lhs, rhs = scatter_decomposition_check(z, mu, delta_perp)
        ok = ok and abs(lhs - rhs) <= 1e-10
        lhs, rhs = scatter_decomposition_check(z, mu, delta)
        cross = float(np.mean(dev @ delta))
        ok = ok and abs((lhs - rhs) + 2.0 * cross) <= 1e-10
    report("criterion 10 (scatter decomposition)", ok)


# ---------------------------------------------------------------------------
# 11. oracle equivalence

def test_criterion_11_oracle_equivalence():
    rng = make_rng(11)
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(2, 4))
        n = int(rng.integers(2, 17))
        d = int(rng.integers(2, 9))
        tau = float(rng.uniform(0.05, 1.0))
        batch = random_unit_batch(rng, m, n, d)
        z0, z1 = batch.embeddings[0], batch.embeddings[1]

        # contrastive, one direction
        naive = 0.0
        for i in range(n):
            sims = [sum(z0[i, k] * z1[j, k] for k in range(d)) / tau
                    for j in range(n)]
            mx = max(sims)
            lse = mx + math.log(sum(math.exp(s - mx) for s in sims))
            naive += lse - sims[i]
        naive /= n
        worst = max(worst, abs(infonce_directional(z0, z1, tau).value - naive))

        # alignment
        naive = 0.0
        for mm in range(1, m):
            naive += sum(
                sum((batch.embeddings[mm][i, k] - z0[i, k]) ** 2 for k in range(d))
                for i in range(n)) / n
        naive /= (m - 1)
        worst = max(worst, abs(loss_atp(batch, 0).value - naive))

        # centroid uniformity
        mu = [[sum(batch.embeddings[mm][i, k] for mm in range(m)) / m
               for k in range(d)] for i in range(n)]
        acc = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    d2 = sum((mu[i][k] - mu[j][k]) ** 2 for k in range(d))
                    acc += math.exp(-2.0 * d2)
        worst = max(worst, abs(loss_cu(batch).value - math.log(acc / n)))

        # sample-level uniformity, batch average
        naive = 0.0
        for mm in range(m):
            acc = 0.0
            zm = batch.embeddings[mm]
            for i in range(n):
                for j in range(n):
                    if i != j:
                        d2 = sum((zm[i, k] - zm[j, k]) ** 2 for k in range(d))
                        acc += math.exp(-2.0 * d2)
            naive += math.log(acc / n) / m
        worst = max(worst, abs(loss_uniform_batch(batch).value - naive))

        # gap, true-pair cosine, intra-modal spread
        cm = [sum(z0[i, k] for i in range(n)) / n for k in range(d)]
        cn = [sum(z1[i, k] for i in range(n)) / n for k in range(d)]
        naive = math.sqrt(sum((cm[k] - cn[k]) ** 2 for k in range(d)))
        worst = max(worst, abs(modality_gap(batch, 0, 1) - naive))
        naive = sum(sum(z0[i, k] * z1[i, k] for k in range(d))
                    for i in range(n)) / n
        worst = max(worst, abs(cos_tp(batch, 0, 1) - naive))
        acc, cnt = 0.0, 0
        for i in range(n):
            for j in range(i + 1, n):
                acc += sum(z0[i, k] * z0[j, k] for k in range(d))
                cnt += 1
        worst = max(worst, abs(angular_value(z0) - acc / cnt))

        # recall@k against a full-sort oracle (exact match required)
        k = int(rng.integers(1, n + 1))
        hits = 0
        for i in range(n):
            scores = [sum(z0[i, kk] * z1[j, kk] for kk in range(d))
                      for j in range(n)]
            order = sorted(range(n), key=lambda j: (-scores[j], j))
            hits += order.index(i) < k
        assert recall_at_k(z0, z1, k) == hits / n

    ok = worst <= 1e-10
    report("criterion 11 (oracle equivalence)", ok, f"max abs dev {worst:.2e}")


# ---------------------------------------------------------------------------
# 12. CLI determinism

def test_criterion_12_cli_determinism(tmp_path):
    ok = True
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(FAST_CONFIG))

    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"train_{tag}"
        assert cli_main(["train", "--config", str(cfg_path), "--out",
                         str(out)]) == 0
        outs.append(out)
    ok = ok and (outs[0] / "timeline.csv").read_bytes() == \
        (outs[1] / "timeline.csv").read_bytes()
    ok = ok and (outs[0] / "embeddings.csv").read_bytes() == \
        (outs[1] / "embeddings.csv").read_bytes()

    for tag in ("a", "b"):
        assert cli_main(["simulate-sphere", "--delta", "120", "--variant",
                         "ours", "--grid-step", "15",
                         "--out", str(tmp_path / f"sph_{tag}")]) == 0
    ok = ok and (tmp_path / "sph_a" / "landscape.csv").read_bytes() == \
        (tmp_path / "sph_b" / "landscape.csv").read_bytes()

    emb = outs[0] / "embeddings.csv"
    for tag in ("a", "b"):
        assert cli_main(["shift-sweep", "--embeddings", str(emb), "--targets",
                         "0,0.5", "--renormalize", "false",
                         "--out", str(tmp_path / f"sw_{tag}")]) == 0
    ok = ok and (tmp_path / "sw_a" / "sweep.csv").read_bytes() == \
        (tmp_path / "sw_b" / "sweep.csv").read_bytes()

    doc = json.loads(json.dumps(FAST_CONFIG))
    doc["loss"]["variant"] = "ours"
    cfg2 = tmp_path / "cfg2.json"
    cfg2.write_text(json.dumps(doc))
    for tag in ("a", "b"):
        assert cli_main(["ablate", "--config", str(cfg2), "--lambda1", "0,1",
                         "--lambda2", "1",
                         "--out", str(tmp_path / f"ab_{tag}")]) == 0
    ok = ok and (tmp_path / "ab_a" / "grid.csv").read_bytes() == \
        (tmp_path / "ab_b" / "grid.csv").read_bytes()

    for tag in ("a", "b"):
        assert cli_main(["metrics", "--embeddings", str(emb), "--knn-k", "3",
                         "--out", str(tmp_path / f"met_{tag}")]) == 0
    ok = ok and (tmp_path / "met_a" / "report.json").read_bytes() == \
        (tmp_path / "met_b" / "report.json").read_bytes()
    report("criterion 12 (CLI determinism)", ok)
