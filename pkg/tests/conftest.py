import time
from pathlib import Path

import numpy as np
import pytest

from rasm import imaging
from rasm.dataset import Manifest, Row, write_manifest


def write_line_set(root, n, seed=0, tokens=("Ha", "Ra", "Ba", "sp", "La")):
    """``n`` small random line images plus a manifest; returns the manifest path."""
    rng = np.random.default_rng(seed)
    (root / "img").mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n):
        img = np.where(rng.random((int(rng.integers(10, 20)), int(rng.integers(30, 60)))) < 0.2, 0.0, 1.0)
        rel = f"img/{i:04d}.png"
        imaging.write_png(img, root / rel)
        rows.append(Row(rel, tuple(rng.choice(tokens, size=int(rng.integers(1, 6))).tolist())))
    path = root / "manifest.csv"
    write_manifest(Manifest(tuple(rows), root), path)
    return path


@pytest.fixture
def line_set(tmp_path):
    return write_line_set(tmp_path, 20)


TINY_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "tiny.json"


@pytest.fixture(scope="session")
def overfit(tmp_path_factory):
    """Synthesize 32 lines and overfit the tiny network on them through the CLI."""
    from rasm import cli

    root = tmp_path_factory.mktemp("overfit")
    data, run = root / "synth", root / "run"
    assert cli.main(["synth", "--count", "32", "--outdir", str(data), "--seed", "0"]) == 0
    start = time.perf_counter()
    code = cli.main(["train", "--manifest", str(data / "manifest.csv"), "--config", str(TINY_CONFIG),
                     "--outdir", str(run), "--seed", "0"])
    seconds = time.perf_counter() - start
    assert code == 0
    return {"data": data, "run": run, "seconds": seconds, "checkpoint": run / "model.ckpt",
            "log": run / "training_log.csv"}
