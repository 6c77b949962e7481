"""Page preprocessing chain used before inference.

Filtering (Gaussian smoothing, total-variation denoising, adaptive
binarization), transformation (Hough deskew) and line segmentation, with
line crops taken from the deskewed grayscale page.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rasm import imaging
from rasm.errors import NoContentError
from rasm.linesegmentation import LineBand, crop_line, segment_lines


@dataclass(frozen=True)
class PreprocessParams:
    sigma: float = 1.0
    tv_strength: float = 0.1
    tv_iterations: int = 50
    window: int = 25
    offset: float = 0.05
    deskew: bool = True
    # skew below the accumulator's resolution is left uncorrected
    min_skew: float = 0.5


@dataclass
class PageResult:
    gray: np.ndarray
    filtered: np.ndarray
    binary: np.ndarray
    angle: float
    deskewed: np.ndarray
    deskewed_binary: np.ndarray
    bands: list[LineBand]

    def lines(self) -> list[np.ndarray]:
        return [crop_line(self.deskewed, b) for b in self.bands]

    def dump(self, outdir) -> list[Path]:
        """Write every intermediate stage as PNG; returns the written paths."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        stages = {
            "01_gray": self.gray,
            "02_filtered": self.filtered,
            "03_binary": self.binary,
            "04_deskewed": self.deskewed,
            "05_deskewed_binary": self.deskewed_binary,
            "06_segmented": self._overlay(),
        }
        paths = []
        for name, img in stages.items():
            p = outdir / f"{name}.png"
            imaging.write_png(img, p)
            paths.append(p)
        return paths

    def _overlay(self) -> np.ndarray:
        img = self.deskewed.copy()
        for b in self.bands:
            img[b.top, :] = 0.5
            img[b.bottom, :] = 0.5
        return img


def filter_page(gray, params: PreprocessParams = PreprocessParams()) -> np.ndarray:
    smoothed = imaging.gaussian_smooth(gray, params.sigma)
    return imaging.tv_denoise(smoothed, params.tv_strength, params.tv_iterations)


def process_page(img, params: PreprocessParams = PreprocessParams()) -> PageResult:
    """Run the whole chain on a gray or RGB page."""
    gray = imaging.to_grayscale(img)
    filtered = filter_page(gray, params)
    binary = imaging.binarize_adaptive(filtered, params.window, params.offset)
    angle = 0.0
    if params.deskew and binary.any():
        try:
            angle = imaging.detect_skew(binary)
        except NoContentError:
            angle = 0.0
    if abs(angle) < params.min_skew:
        angle = 0.0
    if angle != 0.0:
        deskewed = imaging.rotate(gray, -angle)
        deskewed_binary = imaging.binarize_adaptive(imaging.rotate(filtered, -angle), params.window, params.offset)
    else:
        deskewed, deskewed_binary = gray.copy(), binary
    bands = segment_lines(deskewed_binary)
    return PageResult(gray, filtered, binary, angle, deskewed, deskewed_binary, bands)
