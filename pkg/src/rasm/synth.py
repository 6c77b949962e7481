"""Synthetic line and page renderer with ground-truth transcripts.

Each token gets a fixed blocky glyph derived from a hash of its name, so the
same token always renders identically. Glyphs of a word sit on a shared
baseline stroke; ``sp`` tokens render as a wider gap. Lines are laid out
right to left, like Arabic script.
"""
from __future__ import annotations

import zlib
from pathlib import Path
from typing import Sequence

import numpy as np

from rasm import imaging
from rasm.dataset import Manifest, Row, write_manifest
from rasm.labelcodec import load_display_map
from rasm.pipeline import PreprocessParams, process_page

CELL = 4
GRID_ROWS, GRID_COLS = 4, 3
BASELINE = 2
GLYPH_H = GRID_ROWS * CELL
GLYPH_W = GRID_COLS * CELL
LINE_H = GLYPH_H + BASELINE
LETTER_GAP = 2
SPACE_W = 10
SPACE = "sp"


def default_alphabet() -> list[str]:
    """Letter tokens of the shipped display map (punctuation excluded)."""
    return [t for t in load_display_map() if t.isalpha() and t != SPACE]


class GlyphBank:
    def __init__(self, tokens: Sequence[str]):
        self.glyphs: dict[str, np.ndarray] = {}
        taken: set[bytes] = set()
        for token in sorted(set(tokens) - {SPACE}):
            rng = np.random.default_rng(zlib.crc32(token.encode("utf-8")))
            while True:
                cells = rng.random((GRID_ROWS, GRID_COLS)) < 0.5
                # dense rows keep the projection profile flat across a line
                if (cells.sum(axis=1) < 2).any() or not cells.any(axis=0).all() or cells.all():
                    continue
                key = cells.tobytes()
                if key not in taken:
                    break
            taken.add(key)
            self.glyphs[token] = np.kron(cells, np.ones((CELL, CELL), dtype=bool))

    def __getitem__(self, token: str) -> np.ndarray:
        return self.glyphs[token]


def line_width(tokens: Sequence[str]) -> int:
    w = 0
    for t in tokens:
        w += SPACE_W if t == SPACE else GLYPH_W + LETTER_GAP
    return w


def render_line_ink(tokens: Sequence[str], bank: GlyphBank, width: int, margin: int = 4) -> np.ndarray:
    """Boolean ink mask of height ``LINE_H``; first token at the right edge."""
    ink = np.zeros((LINE_H, width), dtype=bool)
    x = width - margin
    word_right = None
    for t in tokens:
        if t == SPACE:
            if word_right is not None:
                ink[GLYPH_H:, x:word_right] = True
            word_right = None
            x -= SPACE_W
            continue
        if word_right is None:
            word_right = x
        x -= GLYPH_W
        if x < margin:
            raise ValueError(f"{len(tokens)} tokens do not fit in a {width}-pixel line")
        ink[:GLYPH_H, x:x + GLYPH_W] |= bank[t]
        x -= LETTER_GAP
    if word_right is not None:
        ink[GLYPH_H:, x + LETTER_GAP:word_right] = True
    return ink


def render_page(lines: Sequence[Sequence[str]], bank: GlyphBank, width: int = 256,
                gap: int = 32, ink: float = 0.0, paper: float = 1.0) -> np.ndarray:
    """Stack rendered lines with ``gap`` blank rows above, between and below."""
    height = gap + len(lines) * (LINE_H + gap)
    page = np.full((height, width), paper)
    y = gap
    for tokens in lines:
        mask = render_line_ink(tokens, bank, width)
        page[y:y + LINE_H][mask] = ink
        y += LINE_H + gap
    return page


def random_tokens(rng: np.random.Generator, alphabet: Sequence[str], words: int = 3,
                  min_word_len: int = 2, max_word_len: int = 4) -> list[str]:
    """``words`` random words; similar line lengths keep the page-mean
    segmentation threshold below every line's row counts."""
    words = [[str(rng.choice(alphabet)) for _ in range(int(rng.integers(min_word_len, max_word_len + 1)))]
             for _ in range(words)]
    out: list[str] = []
    for i, w in enumerate(words):
        if i:
            out.append(SPACE)
        out += w
    return out


def generate(count: int, outdir, seed: int = 0, alphabet: Sequence[str] | None = None,
             width: int = 256, lines_per_page: int = 2, words: int = 3, min_word_len: int = 2,
             max_word_len: int = 4, params: PreprocessParams = PreprocessParams()) -> Manifest:
    """Render ``count`` line images plus ``manifest.csv`` into ``outdir``.

    Lines are drawn ``lines_per_page`` at a time onto a page that goes
    through the inference preprocessing chain, and each segmented band is
    saved as a training line, so training crops match inference crops. The
    pages and a ``pages.csv`` index (page path, then line indices) are kept
    alongside.
    """
    rng = np.random.default_rng(seed)
    alphabet = list(alphabet or default_alphabet())
    bank = GlyphBank(alphabet)
    outdir = Path(outdir)
    (outdir / "lines").mkdir(parents=True, exist_ok=True)
    (outdir / "pages").mkdir(parents=True, exist_ok=True)
    rows: list[Row] = []
    index = []
    while len(rows) < count:
        n = min(lines_per_page, count - len(rows))
        transcripts = [random_tokens(rng, alphabet, words, min_word_len, max_word_len) for _ in range(n)]
        page = render_page(transcripts, bank, width)
        crops = process_page(page, params).lines()
        if len(crops) != n:
            continue  # segmentation merged or split a line; draw again
        page_rel = f"pages/page_{len(index):04d}.png"
        imaging.write_png(page, outdir / page_rel)
        ids = []
        for tokens, crop in zip(transcripts, crops):
            rel = f"lines/line_{len(rows):04d}.png"
            imaging.write_png(crop, outdir / rel)
            ids.append(len(rows))
            rows.append(Row(rel, tuple(tokens)))
        index.append([page_rel, *ids])
    manifest = Manifest(tuple(rows), outdir)
    write_manifest(manifest, outdir / "manifest.csv")
    with (outdir / "pages.csv").open("w", encoding="utf-8") as fh:
        for entry in index:
            fh.write(",".join(map(str, entry)) + "\n")
    return manifest
