"""Build a nominal memory, score frames against it, and export heatmaps.

A frame's score is the smallest Sinkhorn transport cost between its
patches and the memorized patches across all timesteps; the argmin
timestep is the temporal alignment, and the heatmap localizes which
patches drove the cost.
"""

import tempfile
from pathlib import Path

import numpy as np

from failmon import (
    SynthSpec,
    build_memory,
    generate,
    score_episode,
    score_frame,
    write_heatmap_csv,
    write_heatmap_pgm,
)

spec = SynthSpec(horizon=20, n_patches=16, n_features=8, noise_sigma=0.15, base_seed=5, max_cycles=1.5)
nominal, _, _ = generate(spec, 12, seed=1)
memory = build_memory(nominal)
print(f"memory: T={memory.horizon}, P={memory.n_patches}, F={memory.n_features}, floor={memory.sigma_floor}")

# the memory mean itself scores ~0 and aligns to its own timestep
result = score_frame(memory, memory.mean[7])
print(f"memory mean at t=7 -> score {result.score:.2e}, aligned t_min={result.t_min}")

# a frame with one patch pushed 4 sigma off nominal
query = memory.mean[7].astype(np.float64).copy()
query[3] += 4.0 * memory.std[7, 3]
shifted = score_frame(memory, query)
print(f"4-sigma shift on patch 3 -> score {shifted.score:.3f}, hottest patch {int(np.argmax(shifted.heatmap))}")

out_dir = Path(tempfile.mkdtemp(prefix="failmon_demo_"))
write_heatmap_csv(shifted.heatmap, out_dir / "heatmap.csv")
write_heatmap_pgm(shifted.heatmap, out_dir / "heatmap.pgm")  # P=16 renders as a 4x4 grayscale grid
print(f"wrote {out_dir / 'heatmap.csv'} and {out_dir / 'heatmap.pgm'}")

# full episodes: alignment tracks progress even when execution speed varies
episode = generate(spec, 1, seed=9)[0].episode(0)
t_mins = [r.t_min for r in score_episode(memory, episode)]
print(f"nominal episode alignment: {t_mins}")
