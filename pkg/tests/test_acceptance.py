"""Acceptance criteria, one test per criterion.

Each test appends a PASS/FAIL line that is printed in the terminal summary
(section "acceptance criteria").
"""

import csv
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from adaptive_dbn.cli import load_dataset, main, read_config
from adaptive_dbn.data import LabeledDataset
from adaptive_dbn.dbn import load_model
from adaptive_dbn.metrics import ConfusionMatrix, class_report
from adaptive_dbn.rbm import AdaptiveRBM
from adaptive_dbn.relearn import build_plan, kl_divergence

from conftest import ACCEPTANCE_LINES, REFERENCE_RATIOS, REFERENCE_F1, REFERENCE_CONFUSION, REFERENCE_LABELS, FixedModel
from test_rbm import enumerate_distribution

FIXTURE_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "fixture.ini"


@contextmanager
def criterion(number, title, limit, already=0.0):
    # ``already`` counts work done before the block, e.g. a shared pipeline run
    info = {}
    start = time.perf_counter() - already
    status = "FAIL"
    try:
        yield info
        elapsed = time.perf_counter() - start
        assert elapsed < limit, f"took {elapsed:.1f}s, limit {limit}s"
        status = "PASS"
    finally:
        elapsed = time.perf_counter() - start
        detail = info.get("detail", "")
        ACCEPTANCE_LINES.append(f"criterion {number}: {status}  {title} [{elapsed:.2f}s / {limit}s] {detail}".rstrip())


# -- 1 -----------------------------------------------------------------------

def test_criterion_1_metrics_arithmetic():
    with criterion(1, "reference confusion -> per-class F1, ratios, macro average", limit=1.0) as info:
        r = class_report(ConfusionMatrix(REFERENCE_CONFUSION, REFERENCE_LABELS))
        f1_err = max(abs(a - b) for a, b in zip(r.f1, REFERENCE_F1))
        ratios = [f"{100 * x:.1f}" for x in r.ratio]
        macro = f"{100 * r.macro['ratio']:.1f}"
        info["detail"] = f"max |F1 - expected| = {f1_err:.4f}, Anger {ratios[6]}%, macro {macro}%"
        assert f1_err <= 0.01
        assert ratios == [f"{v:.1f}" for v in REFERENCE_RATIOS]
        assert ratios[REFERENCE_LABELS.index("Anger")] == "78.4"
        assert macro == "87.4"


# -- 2 -----------------------------------------------------------------------

def test_criterion_2_kl_oracle():
    with criterion(2, "KL vs brute force on 1000 pairs, KL(P,P) = 0, KL >= 0", limit=5.0) as info:
        rng = np.random.default_rng(2024)
        worst, lowest = 0.0, math.inf
        for _ in range(1000):
            k = int(rng.integers(1, 6))
            classes = [f"c{j}" for j in range(k)]
            p = rng.dirichlet(np.ones(k))
            q = rng.dirichlet(np.ones(k))
            p[rng.random(k) < 0.15] = 0.0
            p = p / p.sum() if p.sum() > 0 else np.full(k, 1.0 / k)
            one = LabeledDataset(X=np.zeros((1, 1)), y=[0], class_labels=tuple(classes))
            got = kl_divergence(FixedModel(classes, [p]), FixedModel(classes, [q]), one).kl[0]
            expected = sum(pi * math.log(pi / max(qi, 1e-12)) for pi, qi in zip(p, q) if pi > 0)
            worst = max(worst, abs(got - max(expected, 0.0)))
            lowest = min(lowest, got)
            same = kl_divergence(FixedModel(classes, [p]), FixedModel(classes, [p]), one).kl[0]
            assert same == 0.0
        info["detail"] = f"max abs error {worst:.2e}, min KL {lowest:.3g}"
        assert worst <= 1e-12
        assert lowest >= 0.0


# -- 3 -----------------------------------------------------------------------

def test_criterion_3_rbm_exact_distribution():
    with criterion(3, "6x4 RBM enumeration; CD raises mass on training patterns", limit=30.0) as info:
        rng = np.random.default_rng(3)
        W, a, b = rng.normal(0, 1, (6, 4)), rng.normal(0, 1, 6), rng.normal(0, 1, 4)
        total = sum(enumerate_distribution(W.tolist(), a.tolist(), b.tolist()).values())
        assert abs(total - 1.0) <= 1e-9

        patterns = [(1, 1, 0, 0, 1, 0), (0, 1, 1, 0, 0, 1)]
        X = np.array(patterns * 10, dtype=float)
        kw = dict(n_hidden=4, gen_threshold=np.inf, random_state=0)

        def mass(rbm):
            p = enumerate_distribution(rbm.weights_.tolist(), rbm.visible_bias_.tolist(), rbm.hidden_bias_.tolist())
            return sum(p[v] for v in patterns)

        before = mass(AdaptiveRBM(epochs=0, **kw).fit(X))
        after = mass(AdaptiveRBM(epochs=50, **kw).fit(X))
        info["detail"] = f"sum {total:.12f}, pattern mass {before:.4f} -> {after:.4f}"
        assert after > before


# -- 4 -----------------------------------------------------------------------

def _forced(nh, eps, threshold):
    rng = np.random.default_rng(nh)
    rbm = AdaptiveRBM.from_params(rng.normal(size=(5, nh)), np.zeros(5), np.zeros(nh), wd_window=2,
                                  gen_threshold=threshold, inherit_noise=eps)
    for mags in ([0.0] * nh, [2.0] + [1.0] * (nh - 1), [0.0] * nh, [0.0] + [1.0] * (nh - 1)):
        rbm.tracker_.record(np.array(mags))
    return rbm


def test_criterion_4_structural_adaptivity():
    with criterion(4, "generation, annihilation and 1000 random event sequences", limit=30.0) as info:
        X = np.random.default_rng(0).random((60, 6))
        rbm = AdaptiveRBM(n_hidden=3, epochs=30, wd_window=2, gen_threshold=np.inf, random_state=0).fit(X)
        assert rbm.n_hidden_ == 3 and not rbm.events_

        eps = 0.05
        rbm = _forced(3, eps, 0.5)
        parent = rbm.weights_[:, 0].copy()
        rbm.maybe_generate_neurons(np.random.default_rng(1))
        assert rbm.n_hidden_ == 4
        assert np.max(np.abs(rbm.weights_[:, 3] - parent)) <= eps

        rbm = AdaptiveRBM.from_params(np.zeros((3, 3)), np.zeros(3), [0.0, -1000.0, 0.0])
        rbm.maybe_annihilate_neurons(np.random.default_rng(2).random((8, 3)))
        assert rbm.n_hidden_ == 2

        rng = np.random.default_rng(4)
        n_events = 0
        for _ in range(1000):
            nv, nh = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            rbm = AdaptiveRBM.from_params(rng.normal(size=(nv, nh)), rng.normal(size=nv), rng.normal(size=nh),
                                          wd_window=2, gen_threshold=0.01, max_hidden=12)
            data = rng.random((5, nv))
            for kind in rng.choice(["generate", "annihilate", "remove", "train"], int(rng.integers(1, 10))):
                if kind == "generate":
                    for _ in range(4):
                        rbm.tracker_.record(rng.random(rbm.n_hidden_))
                    rbm.maybe_generate_neurons(rng)
                elif kind == "annihilate":
                    rbm.hidden_bias_[rng.integers(rbm.n_hidden_)] = rng.choice([-1000.0, 1000.0])
                    rbm.maybe_annihilate_neurons(data)
                elif kind == "remove" and rbm.n_hidden_ > 1:
                    rbm.remove_hidden_neurons(rng.choice(rbm.n_hidden_, int(rng.integers(1, rbm.n_hidden_)),
                                                         replace=False))
                else:
                    rbm.tracker_.record(rbm.cd_update(data, rng))
                n_events += 1
                h = rbm.n_hidden_
                assert rbm.weights_.shape == (nv, h) and rbm.hidden_bias_.shape == (h,)
                assert rbm.visible_bias_.shape == (nv,) and rbm.tracker_.n_neurons == h and h >= 1
                assert rbm.transform(data).shape == (5, h)
        info["detail"] = f"{n_events} structural events checked"


# -- 5 and 6 -----------------------------------------------------------------

def _config_copy(directory, output_dir):
    text = FIXTURE_CONFIG.read_text()
    lines = [f"output_dir = {output_dir}" if line.startswith("output_dir") else line for line in text.splitlines()]
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "fixture.ini"
    path.write_text("\n".join(lines) + "\n")
    return path


def _run_pipeline(root):
    cfg = _config_copy(root, "out")
    model = root / "out" / "model.json"
    codes = [
        main(["fixture", "--config", str(cfg)]),
        main(["train", "--config", str(cfg)]),
        main(["eval", "--config", str(cfg), "--model", str(model)]),
        main(["relearn", "--config", str(cfg), "--model", str(model)]),
    ]
    return cfg, model, codes


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    start = time.perf_counter()
    result = _run_pipeline(tmp_path_factory.mktemp("acceptance") / "first")
    return result, time.perf_counter() - start


def test_criterion_5_end_to_end(pipeline):
    (cfg_path, model_path, codes), elapsed = pipeline
    with criterion(5, "overlap fixture: accuracy, KL ordering, sweep shape", limit=600.0, already=elapsed) as info:
        assert codes == [0, 0, 0, 0]
        cfg = read_config(cfg_path)
        ds = load_dataset(cfg)
        parent = load_model(model_path)
        accuracy = float(np.mean(parent.predict(ds.X) == ds.labels))
        plan = build_plan(parent, ds, cfg.focus_classes)

        out = cfg.output_dir / "relearn"
        agg = {row[0]: float(row[1]) for row in csv.reader(open(out / "kl_aggregate.csv")) if row[0] != "pair"}
        sweep = list(csv.DictReader(open(out / "sweep.csv")))
        ratios = [float(r["classification_ratio"]) if r["flag"] == "ok" else math.nan for r in sweep]
        best = max(ratios)
        at_best = [i for i, r in enumerate(ratios) if r == best]
        interior = any(0 < i < len(ratios) - 1 for i in at_best)

        info["detail"] = (f"(a) acc {accuracy:.3f}, |set2| {len(plan.set2)}; "
                          f"(b) KL(P,Q1) {agg['KL(P;Q1)']:.3f} < KL(P,Q2) {agg['KL(P;Q2)']:.3f}; "
                          f"(c) ratios {[round(100 * r, 1) for r in ratios]}")
        assert accuracy >= 0.90 and len(plan.set2) > 0
        assert agg["KL(P;Q2)"] > agg["KL(P;Q1)"]
        assert len(sweep) >= 3
        assert all(r["flag"] == "ok" for r in sweep)
        assert interior, "classification-ratio maximum is not attained at an interior threshold"
        assert min(ratios) >= 0.85


def test_criterion_6_determinism(pipeline, tmp_path_factory):
    (cfg_path, _, _), _ = pipeline
    with criterion(6, "every CLI command re-run gives byte-identical artifacts", limit=600.0) as info:
        first = read_config(cfg_path).output_dir
        second_cfg, _, codes = _run_pipeline(tmp_path_factory.mktemp("acceptance") / "second")
        assert codes == [0, 0, 0, 0]
        second = read_config(second_cfg).output_dir

        def files(root):
            return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

        a, b = files(first), files(second)
        differing = sorted(str(k) for k in set(a) | set(b) if a.get(k) != b.get(k))
        info["detail"] = f"{len(a)} artifacts compared, {len(differing)} differ"
        assert set(a) == set(b)
        assert not differing, differing
        assert {"fixture.csv", "model.json", "eval/confusion.csv", "relearn/sweep.csv"} <= {str(k) for k in a}
