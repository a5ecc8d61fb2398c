"""Demonstration recordings -> dense (N, T, P, F) patch-feature tensors.

Episode discovery:
  - a directory of episode subdirectories, each holding image frames
    (sorted by filename), or
  - a flat directory of image frames (one episode), or
  - a directory of video files / a single video file (one episode per
    video, requires opencv).

Preprocessing is fixed (bicubic resize to the configured resolution,
ImageNet normalization) and extraction runs single-threaded on CPU, so
the same input produces byte-identical output files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .encoders import IMAGENET_MEAN, IMAGENET_STD, EncoderConfig, PatchEncoder
from .writer import write_feature_tensor

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
VIDEO_SUFFIXES = (".mp4", ".avi", ".mkv", ".mov")
BATCH = 8


def _frame_paths(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def discover_episodes(source: Path) -> list[list[Path] | Path]:
    """Episode list: each entry is a list of frame paths or one video path."""
    if source.is_file():
        if source.suffix.lower() in VIDEO_SUFFIXES:
            return [source]
        raise ValueError(f"{source} is not a recognized video container")
    if not source.is_dir():
        raise FileNotFoundError(f"input {source} does not exist")
    subdirs = sorted(p for p in source.iterdir() if p.is_dir())
    if subdirs:
        episodes: list[list[Path] | Path] = []
        for sub in subdirs:
            frames = _frame_paths(sub)
            if not frames:
                raise ValueError(f"episode directory {sub} contains no image frames")
            episodes.append(frames)
        return episodes
    videos = sorted(p for p in source.iterdir() if p.suffix.lower() in VIDEO_SUFFIXES)
    if videos:
        return list(videos)
    frames = _frame_paths(source)
    if frames:
        return [frames]
    raise ValueError(f"no episode subdirectories, frames, or videos under {source}")


def _load_image_episode(frames: list[Path]) -> list[Image.Image]:
    images = [Image.open(path).convert("RGB") for path in frames]
    sizes = {img.size for img in images}
    if len(sizes) > 1:
        raise ValueError(f"mixed resolutions within an episode: {sorted(sizes)} (first frame {frames[0]})")
    return images


def _load_video_episode(path: Path) -> list[Image.Image]:
    try:
        import cv2
    except ImportError as exc:
        raise RuntimeError("video input requires opencv-python (install the [video] extra)") from exc
    capture = cv2.VideoCapture(str(path))
    images = []
    while True:
        ok, frame = capture.read()
        if not ok:
            break
        images.append(Image.fromarray(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)))
    capture.release()
    if not images:
        raise ValueError(f"no decodable frames in {path}")
    return images


def _preprocess(images: list[Image.Image], resolution: int) -> torch.Tensor:
    mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
    stack = []
    for img in images:
        resized = img.resize((resolution, resolution), Image.BICUBIC)
        array = torch.from_numpy(np.asarray(resized, dtype=np.float32) / 255.0).permute(2, 0, 1)
        stack.append((array - mean) / std)
    return torch.stack(stack)


def extract_features(source: str | Path, config: EncoderConfig, destination: str | Path) -> tuple[int, int, int, int]:
    """Encode every episode under `source` and write one `.ftens` file.

    Episodes must share a frame count (the format is dense); returns the
    resulting (N, T, P, F).
    """
    torch.set_num_threads(1)  # keeps CPU convolutions bit-reproducible
    episodes = discover_episodes(Path(source))
    encoder = PatchEncoder(config)
    encoded: list[np.ndarray] = []
    for episode in episodes:
        images = _load_video_episode(episode) if isinstance(episode, Path) else _load_image_episode(episode)
        batch = _preprocess(images, config.resolution)
        features = [encoder.encode(batch[i : i + BATCH]) for i in range(0, len(batch), BATCH)]
        encoded.append(torch.cat(features).numpy())
    lengths = {e.shape[0] for e in encoded}
    if len(lengths) > 1:
        raise ValueError(f"episodes must share a frame count, got lengths {sorted(lengths)}")
    tensor = np.stack(encoded).astype(np.float32)
    write_feature_tensor(tensor, config.encoder_id, destination)
    return tensor.shape
