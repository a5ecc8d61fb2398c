"""Feature tensors on disk: write, read back, and split for calibration.

The whole pipeline exchanges data through one bit-exact binary format,
so this is the natural place to start.
"""

import io

import numpy as np

from failmon import FeatureTensor, read_feature_file, split_nominal, write_feature_file

rng = np.random.default_rng(0)

# 6 episodes, 10 frames each, 4 patches x 5 features per frame
data = rng.normal(0.0, 1.0, (6, 10, 4, 5)).astype(np.float32)
tensor = FeatureTensor(data=data, encoder_id="demo:random-gaussian")
print(f"tensor: {tensor.n_episodes} episodes, T={tensor.horizon}, P={tensor.n_patches}, F={tensor.n_features}")

buf = io.BytesIO()
write_feature_file(tensor, buf)
blob = buf.getvalue()
print(f"serialized: {len(blob)} bytes (header 26 + encoder_id {len(tensor.encoder_id)} + payload {data.size * 4})")
print(f"magic: {blob[:4]!r}")

back = read_feature_file(blob)
print(f"round trip bitwise equal: {np.array_equal(back.data, tensor.data)}")

# deterministic disjoint split: first half builds the memory, second calibrates
memory_half, calib_half = split_nominal(tensor, seed=7)
print(f"split 6 episodes -> {memory_half.n_episodes} for memory, {calib_half.n_episodes} for calibration")
print(f"same seed reproduces the split: {np.array_equal(split_nominal(tensor, seed=7)[0].data, memory_half.data)}")
