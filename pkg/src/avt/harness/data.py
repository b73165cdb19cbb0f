"""Synthetic audio-video XOR data.

The audio cue is a tone band in the lower or upper frequency region; the
video cue is a bright patch in the top-left or bottom-right quadrant. The
label is ``audio_cue XOR video_cue``, so either modality alone carries no
information about the label.
"""

from __future__ import annotations

import io
import zipfile
from dataclasses import dataclass

import numpy as np

from ..encoders import SpectrogramInput, VideoClipInput


@dataclass
class SyntheticSample:
    video: VideoClipInput
    audio: SpectrogramInput
    label: int
    audio_cue: int
    video_cue: int


@dataclass
class Dataset:
    video: np.ndarray   # (n, T, H, W, C)
    audio: np.ndarray   # (n, time, freq)
    labels: np.ndarray  # (n,)
    audio_cue: np.ndarray
    video_cue: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i) -> SyntheticSample:
        return SyntheticSample(
            VideoClipInput(self.video[i]),
            SpectrogramInput(self.audio[i]),
            int(self.labels[i]),
            int(self.audio_cue[i]),
            int(self.video_cue[i]),
        )

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.video[idx], self.audio[idx], self.labels[idx], self.audio_cue[idx], self.video_cue[idx])

    def save(self, path) -> None:
        """Write an ``.npz`` archive whose bytes depend only on the data.

        ``np.savez`` stamps the current time into the zip headers, so entries
        are written by hand with a fixed timestamp.
        """
        arrays = {"video": self.video, "audio": self.audio, "labels": self.labels,
                  "audio_cue": self.audio_cue, "video_cue": self.video_cue}
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            for name, arr in arrays.items():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as z:
            return cls(z["video"], z["audio"], z["labels"], z["audio_cue"], z["video_cue"])


def gen_xor_dataset(
    n: int,
    audio_shape=(64, 16),
    video_shape=(4, 8, 8, 1),
    noise: float = 0.3,
    seed: int = 0,
) -> Dataset:
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    T, F = audio_shape
    VT, H, W, C = video_shape
    a_cue = rng.integers(0, 2, size=n)
    v_cue = rng.integers(0, 2, size=n)
    labels = a_cue ^ v_cue

    audio = np.zeros((n, T, F))
    band = max(1, F // 4)
    lo = (F // 8, F // 8 + band)
    hi = (F - F // 8 - band, F - F // 8)
    for i in range(n):
        # the tone is active on one contiguous span covering at least half the clip
        length = int(rng.integers(T // 2, T + 1))
        onset = int(rng.integers(0, T - length + 1))
        f0, f1 = hi if a_cue[i] else lo
        audio[i, onset : onset + length, f0:f1] = 1.0

    video = np.zeros((n, VT, H, W, C))
    h2, w2 = H // 2, W // 2
    for i in range(n):
        if v_cue[i]:
            video[i, :, h2:, w2:, :] = 1.0
        else:
            video[i, :, :h2, :w2, :] = 1.0

    audio += noise * rng.standard_normal(audio.shape)
    video += noise * rng.standard_normal(video.shape)
    return Dataset(video, audio, labels.astype(np.int64), a_cue.astype(np.int64), v_cue.astype(np.int64))


def split(data: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Shuffle with a fixed seed and hold out ``val_fraction`` of samples."""
    order = np.random.default_rng([seed, 7]).permutation(len(data))
    n_val = int(round(val_fraction * len(data)))
    return data.subset(np.sort(order[n_val:])), data.subset(np.sort(order[:n_val]))
