import csv
import os

import numpy as np
import pytest

from oracles import adam_scalar
from rasm.dataset import BatchStream, Manifest, Row, load_manifest
from rasm.errors import CorruptCheckpointError, InfeasibleTargetError, ShapeError
from rasm.labelcodec import build_vocabulary
from rasm.nncore import Network, NetworkConfig
from rasm.trainer import (CSV_COLUMNS, AdamState, Callback, CSVLogger, EarlyStopping, EpochRecord,
                          LearningRateScheduler, ModelCheckpoint, TrainConfig, adam_step, default_callbacks,
                          early_stop,
                          file_digest, load_checkpoint, recognize, save_checkpoint, schedule_lr, train)

SMALL = dict(input_height=16, input_width=64, conv_channels=(2, 4), dense_units=8, dropout=0.0,
             lstm_units=6, lstm_layers=1, max_label_len=5)


def small_setup(manifest_path, seed=0):
    m = load_manifest(manifest_path)
    vocab = build_vocabulary([r.tokens for r in m])
    net = Network(NetworkConfig(num_classes=vocab.num_classes, seed=seed, **SMALL))
    stream = BatchStream(m, vocab, 8, height=16, width=64, max_len=5)
    return net, vocab, stream


def rec(epoch, val):
    return EpochRecord(epoch, 1.0, val, 0.0, 1e-3, 0.0)


# -------------------------------------------------------------------- adam

def test_adam_zero_gradient_is_identity():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    adam_step(p, {"w": np.zeros(3)}, AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0, 3.0])


def test_adam_scalar_formula():
    p = {"w": np.array([1.0])}
    state = AdamState()
    grads = [0.5, -0.2, 0.9]
    for g in grads:
        adam_step(p, {"w": np.array([g])}, state, 0.1)
    assert state.t == 3
    assert p["w"][0] == pytest.approx(adam_scalar(1.0, grads, lr=0.1), abs=1e-15)
    assert adam_scalar(1.0, [0.5], lr=0.1) == pytest.approx(0.9, abs=1e-6)


def test_adam_is_deterministic():
    def run():
        rng = np.random.default_rng(0)
        p = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=4)}
        state = AdamState()
        for _ in range(100):
            adam_step(p, {k: rng.normal(size=v.shape) for k, v in p.items()}, state)
        return p

    a, b = run(), run()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_adam_errors():
    with pytest.raises(ShapeError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(2)}, AdamState(), lr=0)


# ---------------------------------------------------------------- policies

def test_schedule_lr():
    assert schedule_lr([], 1e-3) == 1e-3
    assert schedule_lr([rec(1, 1.0)] * 5, 1e-3) == 1e-3
    assert schedule_lr([rec(1, 1.0)] * 6, 1e-3) == pytest.approx(5e-4)
    assert schedule_lr([rec(i, 1.0 - 0.01 * i) for i in range(30)], 1e-3) == 1e-3
    assert schedule_lr([rec(1, 1.0)] * 1000, 1e-3) == 1e-5


def test_schedule_counts_only_strict_improvement():
    # gains of 1e-7 are below the improvement threshold
    hist = [rec(i, 1.0 - 1e-7 * i) for i in range(6)]
    assert schedule_lr(hist, 1e-3) == pytest.approx(5e-4)


def test_early_stop():
    assert not any(early_stop([rec(i, 10.0 - i) for i in range(n)]) for n in range(30))
    assert not early_stop([rec(0, 1.0)] + [rec(i, 1.0) for i in range(1, 10)])
    assert early_stop([rec(0, 1.0)] + [rec(i, 1.0) for i in range(1, 11)])
    stagnant8 = [rec(0, 1.0)] + [rec(i, 1.0) for i in range(1, 9)]
    assert not early_stop(stagnant8 + [rec(9, 0.5)] + [rec(10, 0.6)])


def test_policies_accept_plain_losses():
    assert early_stop([1.0] * 11)
    assert schedule_lr([1.0] * 6, 1e-3) == pytest.approx(5e-4)


def test_train_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)


# -------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip_bit_exact(tmp_path, line_set):
    net, vocab, _ = small_setup(line_set)
    path = tmp_path / "m.ckpt"
    save_checkpoint(net, vocab, path, {"best_val_loss": 1.5})
    loaded, vocab2, meta = load_checkpoint(path)
    assert vocab2 == vocab and meta["best_val_loss"] == 1.5 and meta["blank_id"] == vocab.blank_id
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.random((2, 16, 64))
        np.testing.assert_array_equal(net.forward(x), loaded.forward(x))
    save_checkpoint(loaded, vocab2, tmp_path / "again.ckpt", {"best_val_loss": 1.5})
    assert file_digest(path) == file_digest(tmp_path / "again.ckpt")


@pytest.mark.parametrize("mutate,section", [
    (lambda b: b"X" + b[1:], "magic"),
    (lambda b: b[:8] + b"\x09\x00" + b[10:], "version"),
    (lambda b: b[:14] + b"{" * 4 + b[18:], "metadata"),
    (lambda b: b[:-3], "tensors"),
    (lambda b: b + b"\x00", "trailer"),
])
def test_corrupt_checkpoint_names_section(tmp_path, line_set, mutate, section):
    net, vocab, _ = small_setup(line_set)
    path = tmp_path / "m.ckpt"
    save_checkpoint(net, vocab, path)
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(CorruptCheckpointError) as exc:
        load_checkpoint(path)
    assert exc.value.section == section


def test_checkpoint_keeps_better_file(tmp_path, line_set):
    net, vocab, _ = small_setup(line_set)
    path = tmp_path / "best.ckpt"
    cb = ModelCheckpoint(path, vocab)

    class State:
        pass

    state = State()
    state.net = net
    cb.on_epoch_end(state, rec(1, 2.0))
    before = (os.stat(path).st_mtime_ns, file_digest(path))
    net.named_params()["classifier.bias"] += 1  # a different model that is worse
    cb.on_epoch_end(state, rec(2, 3.0))
    assert (os.stat(path).st_mtime_ns, file_digest(path)) == before
    # a fresh callback picks up the stored best and still refuses
    ModelCheckpoint(path, vocab).on_epoch_end(state, rec(3, 2.5))
    assert file_digest(path) == before[1]
    cb.on_epoch_end(state, rec(4, 1.0))
    assert file_digest(path) != before[1]


# -------------------------------------------------------------------- loop

def test_zero_epochs_write_nothing(tmp_path, line_set):
    net, vocab, stream = small_setup(line_set)
    out = tmp_path / "run"
    out.mkdir()
    cbs = [LearningRateScheduler(), ModelCheckpoint(out / "m.ckpt", vocab), CSVLogger(out / "log.csv"),
           EarlyStopping()]
    assert train(net, stream, stream, TrainConfig(epochs=0), cbs, vocab) == []
    assert list(out.iterdir()) == []


def test_callbacks_run_once_per_epoch_in_order(line_set):
    net, vocab, stream = small_setup(line_set)
    calls = []

    class Spy(Callback):
        def __init__(self, name):
            self.name = name

        def on_epoch_end(self, state, record):
            calls.append((record.epoch, self.name, len(state.history)))

    cbs = [Spy("schedule"), Spy("checkpoint"), Spy("csv"), Spy("early_stop")]
    history = train(net, stream, stream, TrainConfig(epochs=3), cbs, vocab)
    assert [r.epoch for r in history] == [1, 2, 3]
    expected = [(e, n, e) for e in (1, 2, 3) for n in ("schedule", "checkpoint", "csv", "early_stop")]
    assert calls == expected
    assert [type(c) for c in default_callbacks(vocab, "m.ckpt", "log.csv")] == [
        LearningRateScheduler, ModelCheckpoint, CSVLogger, EarlyStopping]


def test_training_log_and_learning(tmp_path, line_set):
    net, vocab, stream = small_setup(line_set)
    log = tmp_path / "log.csv"
    ticks = iter(range(1000))
    cfg = TrainConfig(epochs=6, learning_rate=1e-2)
    cbs = [LearningRateScheduler(), ModelCheckpoint(tmp_path / "m.ckpt", vocab), CSVLogger(log), EarlyStopping()]
    history = train(net, stream, stream, cfg, cbs, vocab, clock=lambda: float(next(ticks)))
    rows = list(csv.reader(log.open()))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 1 + len(history) == 7
    assert [float(r[5]) for r in rows[1:]] == [1.0] * 6
    assert history[-1].train_loss < history[0].train_loss
    assert (tmp_path / "m.ckpt").exists()


def test_early_stopping_ends_training(line_set):
    net, vocab, stream = small_setup(line_set)
    # a vanishing rate keeps the validation loss flat, so patience 1 stops early
    cfg = TrainConfig(epochs=50, learning_rate=1e-9, patience=1)
    history = train(net, stream, stream, cfg, vocab=vocab)
    assert len(history) < 50


def test_infeasible_target_names_sample(tmp_path):
    vocab = build_vocabulary([["Ha", "Ra"]])
    net = Network(NetworkConfig(num_classes=vocab.num_classes, **SMALL))
    m = Manifest((Row("a.png", ("Ha",)), Row("long.png", ("Ha", "Ha", "Ha", "Ha", "Ha", "Ha", "Ha", "Ha", "Ha"))))
    stream = BatchStream(m, vocab, 2, height=16, width=64, max_len=10, reader=lambda p: np.ones((16, 64)))
    with pytest.raises(InfeasibleTargetError, match="long.png"):
        train(net, stream, stream, TrainConfig(epochs=1), vocab=vocab)


def test_recognize_returns_reading_order():
    vocab = build_vocabulary([["Ha", "Ra"]])

    class Fixed:
        def set_mode(self, mode):
            return self

        def forward(self, images):
            # visual order: Ra then Ha, as read left to right
            ids = [vocab.token_to_id("Ra"), vocab.blank_id, vocab.token_to_id("Ha")]
            return np.eye(vocab.num_classes)[ids][None]

    assert recognize(Fixed(), vocab, np.zeros((1, 1, 1))) == [["Ha", "Ra"]]
    assert recognize(Fixed(), vocab, np.zeros((1, 1, 1)), beam_width=4) == [["Ha", "Ra"]]
