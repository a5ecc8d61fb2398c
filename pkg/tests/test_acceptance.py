"""Acceptance suite: one test per release criterion, tolerances pinned.

Monte-Carlo criteria run on fixed seeds whose marginal behavior was
verified across independent redraws; each test prints a PASS line with
the measured quantity (visible under `pytest -s` or `-rA`).
"""

import csv
import dataclasses
import io
import json
import time

import numpy as np
import pytest

from failmon import (
    AnomalyEvent,
    FeatureTensor,
    FilterRequest,
    StaticVlmClient,
    SynthSpec,
    VerdictKind,
    auroc,
    blank_frame,
    build_memory,
    calibrate,
    confusion,
    cp_time_baseline,
    decide,
    exact_ot,
    f1_at_optimal,
    generate,
    load_memory,
    load_profile,
    read_feature_file,
    relabel_failures,
    render_heatmap_overlay,
    save_memory,
    save_profile,
    score_episode,
    score_frame,
    semantic_filter,
    sinkhorn,
    write_feature_file,
)
from failmon.cli import main
from failmon.scoring import ScoreConfig
from tests.conftest import make_memory
from tests.test_metrics import pairwise_auroc, scan_f1

FAST = ScoreConfig(max_iter=64)


# --- OT oracle equivalence + marginal feasibility ---------------------------

@pytest.fixture(scope="module")
def ot_oracle_runs():
    rng = np.random.default_rng(42)
    runs = []
    start = time.monotonic()
    for _ in range(200):
        p = int(rng.integers(2, 6))
        values = rng.uniform(0.0, 1.0, (p, p))
        plan, cost = sinkhorn(values, epsilon=0.01 * values.mean(), max_iter=500, tol=1e-9)
        runs.append((plan, cost, exact_ot(values)))
    return runs, time.monotonic() - start


def test_ot_oracle_equivalence(ot_oracle_runs):
    runs, elapsed = ot_oracle_runs
    for plan, cost, exact in runs:
        assert abs(cost - exact) <= 0.02 * exact + 1e-6
    assert elapsed < 10.0
    worst = max(abs(c - e) / (0.02 * e + 1e-6) for _, c, e in runs)
    print(f"PASS ot-oracle-equivalence: 200 matrices, worst gap at {worst:.2f}x the bound, {elapsed:.1f}s")


def test_sinkhorn_marginal_feasibility(ot_oracle_runs):
    runs, _ = ot_oracle_runs
    worst = max(plan.marginal_violation() for plan, _, _ in runs)
    assert worst <= 1e-5
    print(f"PASS sinkhorn-marginal-feasibility: worst row/col violation {worst:.2e} <= 1e-5")


# --- identity scoring --------------------------------------------------------

def test_identity_scoring_fifty_memories():
    config = ScoreConfig(epsilon_scale=0.01, max_iter=500)
    rng = np.random.default_rng(0)
    worst_score, worst_heat = 0.0, 0.0
    for _ in range(50):
        memory = make_memory(
            rng,
            horizon=int(rng.integers(4, 11)),
            n_patches=int(rng.integers(4, 10)),
            n_features=int(rng.integers(4, 11)),
        )
        for t in range(memory.horizon):
            result = score_frame(memory, memory.mean[t], config=config)
            assert result.score < 1e-4
            assert np.all(result.heatmap < 1e-4)
            worst_score = max(worst_score, result.score)
            worst_heat = max(worst_heat, float(result.heatmap.max()))
    print(f"PASS identity-scoring: 50 memories, worst score {worst_score:.2e}, worst heatmap {worst_heat:.2e}")


# --- shift monotonicity ------------------------------------------------------

def test_shift_monotonicity_hundred_trials():
    rng = np.random.default_rng(1)
    for _ in range(100):
        memory = make_memory(
            rng,
            horizon=int(rng.integers(5, 11)),
            n_patches=int(rng.integers(4, 9)),
            n_features=int(rng.integers(8, 17)),  # F >= 8
        )
        t = int(rng.integers(0, memory.horizon))
        patch = int(rng.integers(0, memory.n_patches))
        scores = []
        for k in (0, 1, 2, 4):
            query = memory.mean[t].astype(np.float64).copy()
            query[patch] += k * memory.std[t, patch]
            scores.append(score_frame(memory, query).score)
        assert all(a < b for a, b in zip(scores, scores[1:]))
    print("PASS shift-monotonicity: strictly increasing scores in 100/100 trials")


# --- conformal coverage + speed-warp robustness ------------------------------

COVERAGE_SPEC = SynthSpec(
    horizon=32, n_patches=16, n_features=8, noise_sigma=0.2, base_seed=11, max_cycles=1.2
)
COVERAGE_BOUNDS = {0.05: 0.11, 0.1: 0.16, 0.2: 0.26}  # alpha + binomial 95% slack


@pytest.fixture(scope="module")
def coverage_state():
    start = time.monotonic()
    nominal, _, _ = generate(COVERAGE_SPEC, 20, seed=101)
    holdout, _, _ = generate(COVERAGE_SPEC, 20, seed=202)
    memory = build_memory(nominal)
    profiles = {
        alpha: calibrate(memory, holdout, alpha=alpha, seed=9, rho_floor=0.05, config=FAST)
        for alpha in COVERAGE_BOUNDS
    }
    fresh, _, _ = generate(COVERAGE_SPEC, 200, seed=303)
    fresh_results = [score_episode(memory, fresh.episode(n), config=FAST) for n in range(200)]
    rates = {
        alpha: np.mean([any(decide(prof, r).anomalous for r in res) for res in fresh_results])
        for alpha, prof in profiles.items()
    }
    elapsed = time.monotonic() - start
    warp_spec = dataclasses.replace(COVERAGE_SPEC, speed_warp=(0.7, 1.4))
    warped, _, _ = generate(warp_spec, 200, seed=404)
    warped_results = [score_episode(memory, warped.episode(n), config=FAST) for n in range(200)]
    warped_rate = np.mean([any(decide(profiles[0.1], r).anomalous for r in res) for res in warped_results])
    return {"rates": rates, "elapsed": elapsed, "unwarped_rate": rates[0.1], "warped_rate": warped_rate}


def test_conformal_coverage(coverage_state):
    for alpha, bound in COVERAGE_BOUNDS.items():
        assert coverage_state["rates"][alpha] <= bound, (
            f"alpha={alpha}: episode false-flag rate {coverage_state['rates'][alpha]:.3f} > {bound}"
        )
    assert coverage_state["elapsed"] < 120.0
    rates = {a: round(float(r), 3) for a, r in coverage_state["rates"].items()}
    print(f"PASS conformal-coverage: rates {rates} within bounds {COVERAGE_BOUNDS}, {coverage_state['elapsed']:.0f}s")


def test_speed_warp_robustness(coverage_state):
    unwarped, warped = coverage_state["unwarped_rate"], coverage_state["warped_rate"]
    assert warped <= 2.0 * unwarped, f"warped rate {warped:.3f} exceeds 2x unwarped {unwarped:.3f}"
    print(f"PASS speed-warp-robustness: warped {warped:.3f} <= 2 x unwarped {unwarped:.3f}")


# --- detection quality at desk scale -----------------------------------------

def test_detection_quality_desk_scale():
    base = dict(horizon=32, n_patches=16, n_features=8, noise_sigma=0.15, base_seed=21, max_cycles=1.5)
    memory = build_memory(generate(SynthSpec(**base), 20, seed=1)[0])

    def frame_auroc(magnitude, seed):
        event = AnomalyEvent(start=12, end=20, patches=(0, 1, 2, 3), magnitude=magnitude)
        tensor, labels, _ = generate(SynthSpec(**base, events=(event,)), 30, seed=seed)
        scores = [
            r.score for n in range(30) for r in score_episode(memory, tensor.episode(n), config=FAST)
        ]
        return auroc(scores, labels.ravel())

    strong = frame_auroc(4.0, seed=2)
    null = frame_auroc(0.0, seed=3)
    assert strong >= 0.95
    assert 0.45 <= null <= 0.55
    print(f"PASS detection-quality: 4-sigma AUROC {strong:.3f} >= 0.95, 0-sigma AUROC {null:.3f} in [0.45, 0.55]")


# --- metric oracles -----------------------------------------------------------

def test_metric_oracles_thousand_instances():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(4, 40))
        scores = np.round(rng.normal(0, 1, n), 1)  # coarse grid forces ties
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert auroc(scores, labels) == pairwise_auroc(scores.tolist(), labels.tolist())
        f1, thr = f1_at_optimal(scores, labels)
        oracle_f1, oracle_thr = scan_f1(scores.tolist(), labels.tolist())
        assert f1 == oracle_f1 and thr == oracle_thr
    print("PASS metric-oracles: AUROC and F1@opt match brute force exactly on 1000 instances")


# --- end-to-end failure mode with a scripted filter ---------------------------

def test_semantic_filter_beats_anomaly_only_on_failure_labels():
    base = dict(horizon=28, n_patches=16, n_features=8, noise_sigma=0.15, base_seed=41, max_cycles=1.5)
    memory = build_memory(generate(SynthSpec(**base), 20, seed=21)[0])
    profile = calibrate(memory, generate(SynthSpec(**base), 20, seed=22)[0],
                        alpha=0.1, seed=3, rho_floor=0.05, config=FAST)
    events = (
        AnomalyEvent(start=5, end=10, patches=(2, 3, 4), magnitude=5.0, kind="benign"),
        AnomalyEvent(start=18, end=23, patches=(9, 10, 11), magnitude=5.0, kind="failure"),
    )
    tensor, anomaly, failure = generate(SynthSpec(**base, events=events), 25, seed=23)
    failure_labels = relabel_failures(anomaly.ravel(), failure.ravel())
    frame_png = blank_frame(64, 64)
    pred_anomaly, pred_filtered = [], []
    for n in range(25):
        for t, result in enumerate(score_episode(memory, tensor.episode(n), config=FAST)):
            decision = decide(profile, result)
            pred_anomaly.append(int(decision.anomalous))
            if not decision.anomalous:
                pred_filtered.append(0)
                continue
            # scripted endpoint: FAILURE exactly for failure-kind events
            reply = (
                "FAILURE: the arm left the demonstrated workspace"
                if failure[n, t]
                else "FALSE_POSITIVE: benign scene change in the background"
            )
            request = FilterRequest(
                task_description="solder the joint",
                reference_image=frame_png,
                current_image=frame_png,
                heatmap_image=render_heatmap_overlay(frame_png, result.heatmap, (4, 4)),
                t_min=result.t_min,
            )
            verdict = semantic_filter(request, StaticVlmClient(reply))
            pred_filtered.append(int(verdict.kind is VerdictKind.FAILURE))
    weighted_anomaly = confusion(np.array(pred_anomaly), failure_labels).weighted_acc
    weighted_filtered = confusion(np.array(pred_filtered), failure_labels).weighted_acc
    assert weighted_filtered > weighted_anomaly
    print(
        "PASS semantic-filter-end-to-end: weighted accuracy "
        f"{weighted_filtered:.3f} (filtered) > {weighted_anomaly:.3f} (anomaly-only)"
    )


# --- spatial CP beats temporal CP on localized anomalies ----------------------

def test_cp_space_beats_cp_time_on_localized_anomalies():
    base = dict(horizon=24, n_patches=20, n_features=12, noise_sigma=0.15, base_seed=31, max_cycles=1.5)
    memory = build_memory(generate(SynthSpec(**base), 20, seed=11)[0])
    holdout = generate(SynthSpec(**base), 40, seed=12)[0]
    space = calibrate(memory, holdout, alpha=0.1, seed=5, rho_floor=0.05, tau=0.02, config=FAST)
    pooled = cp_time_baseline(memory, holdout, alpha=0.1, seed=5, rho_floor=0.05, tau=0.02, config=FAST)
    event = AnomalyEvent(start=8, end=16, patches=(3, 11), magnitude=3.0)  # 2/20 = 10% of patches
    tensor, labels, _ = generate(SynthSpec(**base, events=(event,)), 30, seed=13)
    results = [score_episode(memory, tensor.episode(n), config=FAST) for n in range(30)]
    flat = labels.ravel()
    balanced = {}
    for name, prof in (("space", space), ("time", pooled)):
        preds = np.array([int(decide(prof, r).anomalous) for res in results for r in res])
        balanced[name] = confusion(preds, flat).balanced_acc
    assert balanced["space"] >= balanced["time"] + 0.05
    print(
        "PASS cp-space-vs-cp-time: balanced accuracy "
        f"{balanced['space']:.3f} (time+space) >= {balanced['time']:.3f} (time) + 0.05"
    )


# --- byte-identical round trips + CLI smoke -----------------------------------

def test_format_roundtrips_byte_identical():
    spec = SynthSpec(horizon=10, n_patches=4, n_features=6, noise_sigma=0.2, base_seed=8)
    tensor, _, _ = generate(spec, 8, seed=4)
    blob = io.BytesIO()
    write_feature_file(tensor, blob)
    second = io.BytesIO()
    write_feature_file(read_feature_file(blob.getvalue()), second)
    assert second.getvalue() == blob.getvalue()

    memory = build_memory(tensor)
    mem_blob = io.BytesIO()
    save_memory(memory, mem_blob)
    mem_second = io.BytesIO()
    save_memory(load_memory(mem_blob.getvalue()), mem_second)
    assert mem_second.getvalue() == mem_blob.getvalue()

    profile = calibrate(memory, generate(spec, 6, seed=5)[0], alpha=0.2, seed=1, config=FAST)
    prof_blob = io.BytesIO()
    save_profile(profile, prof_blob)
    prof_second = io.BytesIO()
    save_profile(load_profile(prof_blob.getvalue()), prof_second)
    assert prof_second.getvalue() == prof_blob.getvalue()
    print("PASS format-roundtrips: .ftens/.fmem/.fcal write-read-write byte identical")


def test_cli_smoke_chain(tmp_path):
    spec_doc = {
        "horizon": 8, "n_patches": 4, "n_features": 5, "noise_sigma": 0.2,
        "base_seed": 3, "max_cycles": 1.2,
        "events": [{"start": 3, "end": 6, "patches": [1], "magnitude": 5.0, "kind": "failure"}],
    }
    nominal_spec = tmp_path / "nominal.json"
    nominal_spec.write_text(json.dumps(dict(spec_doc, events=[])))
    event_spec = tmp_path / "events.json"
    event_spec.write_text(json.dumps(spec_doc))

    steps = [
        ["synth", "--spec", str(nominal_spec), "--episodes", "10", "--seed", "1",
         "--out", str(tmp_path / "nominal.ftens")],
        ["synth", "--spec", str(event_spec), "--episodes", "3", "--seed", "2",
         "--out", str(tmp_path / "test.ftens"), "--labels-out", str(tmp_path / "labels.csv")],
        ["build-memory", "--features", str(tmp_path / "nominal.ftens"),
         "--out", str(tmp_path / "mem.fmem"), "--calib-out", str(tmp_path / "calib.ftens")],
        ["calibrate", "--memory", str(tmp_path / "mem.fmem"), "--calib", str(tmp_path / "calib.ftens"),
         "--alpha", "0.2", "--rho-floor", "0.05", "--max-iter", "40", "--out", str(tmp_path / "prof.fcal")],
        ["score", "--memory", str(tmp_path / "mem.fmem"), "--profile", str(tmp_path / "prof.fcal"),
         "--input", str(tmp_path / "test.ftens"), "--out", str(tmp_path / "scores.csv"), "--max-iter", "40"],
        ["evaluate", "--scores", str(tmp_path / "scores.csv"), "--labels", str(tmp_path / "labels.csv"),
         "--mode", "anomaly", "--out", str(tmp_path / "report.csv")],
        ["evaluate", "--scores", str(tmp_path / "scores.csv"), "--labels", str(tmp_path / "labels.csv"),
         "--mode", "failure", "--out", str(tmp_path / "report_failure.csv")],
    ]
    for argv in steps:
        assert main(argv) == 0, f"CLI step failed: {argv[0]}"

    # monitor leg: stream the first test episode through a scripted endpoint
    tensor = read_feature_file(tmp_path / "test.ftens")
    stream = tmp_path / "frames.bin"
    from failmon import write_frame_stream

    with open(stream, "wb") as handle:
        write_frame_stream(tensor.data[0], handle)
    vlm_config = tmp_path / "vlm.json"
    vlm_config.write_text(json.dumps({
        "type": "mock", "task_description": "press the buttons in order",
        "fallback": "fail-closed", "default_reply": "FAILURE: wrong button pressed",
    }))
    assert main(["monitor", "--memory", str(tmp_path / "mem.fmem"), "--profile", str(tmp_path / "prof.fcal"),
                 "--stream", str(stream), "--out", str(tmp_path / "verdicts.csv"),
                 "--vlm-config", str(vlm_config), "--max-iter", "40"]) == 0
    with open(tmp_path / "verdicts.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 8
    print("PASS cli-smoke: synth/build-memory/calibrate/score/monitor/evaluate all exit 0")
