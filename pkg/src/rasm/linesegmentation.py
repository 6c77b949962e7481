"""Line-level segmentation of binarized pages by horizontal projection."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from rasm.errors import InvalidParameterError


class LineBand(NamedTuple):
    top: int     # inclusive
    bottom: int  # inclusive

    @property
    def height(self) -> int:
        return self.bottom - self.top + 1


def horizontal_projection(binary) -> np.ndarray:
    """Ink pixels per row."""
    return np.asarray(binary, dtype=np.int64).sum(axis=1)


def _runs(mask: np.ndarray) -> list[list[int]]:
    runs, start = [], None
    for r, on in enumerate(mask):
        if on and start is None:
            start = r
        elif not on and start is not None:
            runs.append([start, r - 1])
            start = None
    if start is not None:
        runs.append([start, len(mask) - 1])
    return runs


def segment_lines(binary, min_height: int = 3, merge_gap: int = 2, expand: int = 1) -> list[LineBand]:
    """Bands of rows whose ink count exceeds the page's mean row count.

    Runs separated by fewer than ``merge_gap`` non-text rows are joined
    first, so split-off dots stay with their line; runs still shorter than
    ``min_height`` are dropped; survivors grow by ``expand`` rows per side.
    """
    profile = horizontal_projection(binary)
    if profile.sum() == 0:
        return []
    runs = _runs(profile > profile.mean())
    merged: list[list[int]] = []
    for run in runs:
        if merged and run[0] - merged[-1][1] - 1 < merge_gap:
            merged[-1][1] = run[1]
        else:
            merged.append(run)
    h = len(profile)
    bands = []
    for top, bottom in merged:
        if bottom - top + 1 < min_height:
            continue
        top, bottom = max(0, top - expand), min(h - 1, bottom + expand)
        if bands and top <= bands[-1].bottom:
            # expansion must not make neighbours overlap
            top = bands[-1].bottom + 1
        bands.append(LineBand(top, bottom))
    return bands


def crop_line(img, band: LineBand) -> np.ndarray:
    """Rows ``band.top..band.bottom`` across the full page width."""
    arr = np.asarray(img)
    if not 0 <= band.top <= band.bottom < arr.shape[0]:
        raise InvalidParameterError(f"band {tuple(band)} outside image with {arr.shape[0]} rows")
    return arr[band.top:band.bottom + 1].copy()
