"""Filter flagged anomalies through a (scripted) vision-language endpoint.

Thresholding alone cannot tell a harmless scene change from a genuine
failure: both exceed the bounds.  The semantic filter sees the reference
frame, the live frame, and the heatmap overlay, and only failures
survive it.  A scripted client stands in for the endpoint so the demo
runs offline; swap in HttpVlmClient for a hosted model.
"""

import numpy as np

from failmon import (
    AnomalyEvent,
    FallbackPolicy,
    FilterRequest,
    StaticVlmClient,
    SynthSpec,
    VerdictKind,
    blank_frame,
    build_memory,
    build_prompt,
    calibrate,
    decide,
    generate,
    render_heatmap_overlay,
    score_episode,
    semantic_filter,
)
from failmon.scoring import ScoreConfig

config = ScoreConfig(max_iter=64)
base = dict(horizon=24, n_patches=16, n_features=8, noise_sigma=0.15, base_seed=41, max_cycles=1.5)
events = (
    AnomalyEvent(start=4, end=9, patches=(1, 2), magnitude=5.0, kind="benign"),
    AnomalyEvent(start=15, end=20, patches=(8, 9), magnitude=5.0, kind="failure"),
)

memory = build_memory(generate(SynthSpec(**base), 16, seed=1)[0])
profile = calibrate(memory, generate(SynthSpec(**base), 16, seed=2)[0],
                    alpha=0.1, rho_floor=0.05, config=config)
episode, anomaly, failure = generate(SynthSpec(**base, events=events), 1, seed=3)

print("prompt sent to the endpoint (first lines):")
print("  " + "\n  ".join(build_prompt("stack the cups").splitlines()[:3]))
print()

frame_png = blank_frame(96, 96)
for t, result in enumerate(score_episode(memory, episode.episode(0), config=config)):
    decision = decide(profile, result)
    if not decision.anomalous:
        continue
    # a real deployment wires camera frames here; the heatmap overlay is rendered either way
    request = FilterRequest(
        task_description="stack the cups",
        reference_image=frame_png,
        current_image=frame_png,
        heatmap_image=render_heatmap_overlay(frame_png, result.heatmap, (4, 4)),
        t_min=result.t_min,
    )
    scripted = StaticVlmClient(
        "FAILURE: the gripper dropped the cup" if failure[0, t] else "FALSE_POSITIVE: shadow moved across the table"
    )
    verdict = semantic_filter(request, scripted, FallbackPolicy.FAIL_CLOSED)
    kind = "failure " if failure[0, t] else ("benign  " if anomaly[0, t] else "nominal ")
    print(f"frame {t:2d} [{kind}] flagged -> verdict {verdict.kind.value:16s} ({verdict.rationale})")

print("\nonly the failure-kind frames survive the filter; benign flags are released.")
