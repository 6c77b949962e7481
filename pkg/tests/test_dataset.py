import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rasm import dataset
from rasm.dataset import BatchStream, Manifest, Row, audit, clean, load_manifest, split, split_sizes
from rasm.errors import InvalidParameterError, ManifestParseError
from rasm.labelcodec import build_vocabulary


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_three_rows(tmp_path):
    m = load_manifest(_write(tmp_path / "m.csv", "a.png,Ha,Ra\nb.png,Ba\nc.png,La,sp,Ha\n"))
    assert len(m) == 3
    assert m.rows[0] == Row("a.png", ("Ha", "Ra"))
    assert m.resolve(m.rows[0]) == tmp_path / "a.png"


def test_tif_rewritten_and_counted(tmp_path):
    path = _write(tmp_path / "m.csv", "x.tif,Ha\ny.TIF,Ra\nz.png,Ba\n")
    m = load_manifest(path)
    assert [r.image_path for r in m] == ["x.jpg", "y.jpg", "z.png"]
    assert dataset.count_extension_rewrites(path) == 2


def test_empty_cells_end_tokens(tmp_path):
    m = load_manifest(_write(tmp_path / "m.csv", "a.png,,,\nb.png,Ha,Ra,,\n"))
    assert m.rows[0].tokens == ()
    assert m.rows[1].tokens == ("Ha", "Ra")


def test_missing_path_names_row(tmp_path):
    with pytest.raises(ManifestParseError) as exc:
        load_manifest(_write(tmp_path / "m.csv", "a.png,Ha\n,Ra\n"))
    assert exc.value.row == 2


def _manifest(lengths):
    return Manifest(tuple(Row(f"{i}.png", ("Ha",) * n) for i, n in enumerate(lengths)))


def test_audit_arithmetic():
    rep = audit(_manifest([3, 5, 0]))
    assert rep.unannotated_count == 1
    assert rep.length_max == 5 and rep.length_min == 0
    assert rep.length_mean == pytest.approx(8 / 3)
    assert rep.unannotated_paths == ["2.png"]


def test_audit_empty_manifest():
    rep = audit(_manifest([]))
    assert rep.row_count == 0 and rep.unannotated_count == 0 and rep.length_max == 0


def test_audit_files(tmp_path):
    rep = audit(_manifest([3, 80]))
    rep.write(tmp_path / "a.txt", tmp_path / "a.json")
    assert json.loads((tmp_path / "a.json").read_text())["outlier_count"] == 1
    assert "rows" in (tmp_path / "a.txt").read_text()


def test_clean_rule():
    kept = clean(_manifest([0, 10, 71, 70]))
    assert [len(r.tokens) for r in kept] == [10, 70]
    ok = _manifest([1, 2, 3])
    assert clean(ok) == ok


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 80), max_size=30))
def test_clean_is_idempotent(lengths):
    once = clean(_manifest(lengths))
    assert clean(once) == once


def test_split_sizes():
    assert split_sizes(1000, (0.7, 0.15, 0.15)) == (700, 150, 150)
    assert split_sizes(11, (0.7, 0.15, 0.15)) == (9, 1, 1)


def test_split_is_seeded_partition():
    m = _manifest([1] * 1000)
    a = split(m, seed=7)
    b = split(m, seed=7)
    assert [len(p) for p in a] == [700, 150, 150]
    assert a == b
    paths = [r.image_path for part in a for r in part]
    assert sorted(paths) == sorted(r.image_path for r in m)
    assert split(m, seed=8) != a


def test_split_rejects_bad_ratios():
    with pytest.raises(InvalidParameterError):
        split(_manifest([1] * 10), (0.5, 0.5, 0.5))


def test_batch_sizes_of_100_rows(tmp_path):
    m = _manifest([2] * 100)
    vocab = build_vocabulary([["Ha"]])
    stream = BatchStream(m, vocab, 16, height=8, width=16, reader=lambda p: np.ones((4, 4)))
    assert [len(b) for b in stream] == [16] * 6 + [4]


def test_batch_contents(line_set):
    m = load_manifest(line_set)
    vocab = build_vocabulary([r.tokens for r in m])
    batch = next(iter(BatchStream(m, vocab, 4, height=16, width=64, max_len=10)))
    assert batch.images.shape == (4, 16, 64, 1) and batch.images.dtype == np.float32
    assert batch.labels.shape == (4, 10)
    for row, tgt in zip(m.rows[:4], batch.targets()):
        np.testing.assert_array_equal(tgt, vocab.ids(row.tokens)[::-1])


def test_prefetch_matches_sequential(line_set):
    m = load_manifest(line_set)
    vocab = build_vocabulary([r.tokens for r in m])
    a = list(BatchStream(m, vocab, 3, prefetch_depth=0, height=16, width=64))
    b = list(BatchStream(m, vocab, 3, prefetch_depth=4, height=16, width=64))
    assert len(a) == len(b)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.images, y.images)
        np.testing.assert_array_equal(x.labels, y.labels)
        assert x.paths == y.paths


def test_cache_avoids_second_reads(line_set):
    m = load_manifest(line_set)
    vocab = build_vocabulary([r.tokens for r in m])
    stream = BatchStream(m, vocab, 5, height=16, width=64)
    list(stream)
    first = stream.reads
    list(stream)
    assert first == len(m) and stream.reads == first
    uncached = BatchStream(m, vocab, 5, cache=False, height=16, width=64)
    list(uncached)
    list(uncached)
    assert uncached.reads == 2 * len(m)


def test_unreadable_rows_are_skipped(line_set):
    m = load_manifest(line_set)
    m = m.subset(list(m.rows[:3]) + [Row("img/missing.png", ("Ha",))])
    vocab = build_vocabulary([r.tokens for r in m])
    for depth in (0, 2):
        stream = BatchStream(m, vocab, 2, prefetch_depth=depth, height=16, width=64)
        assert sum(len(b) for b in stream) == 3
        assert stream.errors and stream.errors[0][0] == "img/missing.png"


def test_early_exit_from_prefetch_stream(line_set):
    m = load_manifest(line_set)
    vocab = build_vocabulary([r.tokens for r in m])
    stream = BatchStream(m, vocab, 1, prefetch_depth=1, height=16, width=64)
    for i, _ in enumerate(stream):
        if i == 1:
            break
    assert len(list(stream)) == len(m)
