"""Calibrate spatio-temporal conformal thresholds and flag anomalies.

Half the held-out nominal episodes estimate per-(timestep, patch) score
statistics; the other half supply the deviations whose finite-sample
quantile becomes the bandwidth.  The resulting false-flag rate on fresh
nominal episodes stays below alpha, while injected shifts are caught.
"""

import numpy as np

from failmon import (
    AnomalyEvent,
    SynthSpec,
    build_memory,
    calibrate,
    decide,
    generate,
    score_episode,
)
from failmon.scoring import ScoreConfig

config = ScoreConfig(max_iter=64)
spec = SynthSpec(horizon=24, n_patches=16, n_features=8, noise_sigma=0.2, base_seed=11, max_cycles=1.2)

memory = build_memory(generate(spec, 20, seed=1)[0])
holdout = generate(spec, 20, seed=2)[0]
profile = calibrate(memory, holdout, alpha=0.1, seed=9, rho_floor=0.05, config=config)
print(f"calibrated: h={profile.h:.3f}, split {profile.calibration_sizes}, tau={profile.tau}")

fresh, _, _ = generate(spec, 40, seed=3)
flagged = 0
for n in range(40):
    results = score_episode(memory, fresh.episode(n), config=config)
    if any(decide(profile, r).anomalous for r in results):
        flagged += 1
print(f"fresh nominal episodes flagged: {flagged}/40 (alpha budget 0.1)")

event = AnomalyEvent(start=8, end=14, patches=(2, 3), magnitude=4.0)
anomalous, labels, _ = generate(SynthSpec(horizon=24, n_patches=16, n_features=8, noise_sigma=0.2,
                                          base_seed=11, max_cycles=1.2, events=(event,)), 5, seed=4)
print("\nepisode with a 4-sigma shift on patches {2, 3} during frames 8..13:")
results = score_episode(memory, anomalous.episode(0), config=config)
for t, r in enumerate(results):
    d = decide(profile, r)
    marker = " <- event" if labels[0, t] else ""
    if d.anomalous or labels[0, t]:
        print(f"  frame {t:2d}: t_min={r.t_min:2d} exceed={d.exceed_fraction:.2f} "
              f"anomalous={d.anomalous} patches={d.exceeding_patches}{marker}")
