import math

import numpy as np
import pytest

from oracles import (collapse_ref, contributing_paths, ctc_brute_probability, labeling_masses,
                     numerical_grad, rel_error)
from rasm.ctc import (batch_ctc_loss, beam_decode, collapse, ctc_loss, ctc_loss_from_log_probs,
                      greedy_decode, log_softmax, min_frames, sequence_probability)
from rasm.errors import InfeasibleTargetError, InvalidDistributionError


def random_probs(rng, T, K):
    z = rng.normal(size=(T, K))
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def test_collapse_rules():
    c, a, t, blank = 0, 1, 2, 3
    assert collapse([c, a, a, blank, t], blank) == [c, a, t]
    assert collapse([blank, blank, blank], blank) == []
    assert collapse([a, blank, a], blank) == [a, a]


def test_collapse_matches_reference():
    rng = np.random.default_rng(0)
    for _ in range(200):
        path = rng.integers(0, 4, size=rng.integers(0, 10)).tolist()
        assert tuple(collapse(path, 3)) == collapse_ref(path, 3)


def test_min_frames_counts_repeats():
    assert min_frames([1, 1, 2]) == 4
    assert min_frames([]) == 0


def test_hi_example_paths_and_loss():
    h, i, blank = 0, 1, 2
    paths = contributing_paths(3, 3, (h, i), blank)
    assert sorted(paths) == sorted([(h, h, i), (h, i, i), (blank, h, i), (h, blank, i), (h, i, blank)])
    probs = random_probs(np.random.default_rng(1), 3, 3)
    direct = sum(math.prod(probs[t, k] for t, k in enumerate(p)) for p in paths)
    loss, _ = ctc_loss(probs, [h, i])
    assert loss == pytest.approx(-math.log(direct), abs=1e-10)


def test_single_frame_uniform():
    K = 5
    loss, _ = ctc_loss(np.full((1, K), 1 / K), [2])
    assert loss == pytest.approx(math.log(K), abs=1e-12)


def test_empty_target_is_all_blank_path():
    probs = random_probs(np.random.default_rng(2), 4, 3)
    loss, _ = ctc_loss(probs, [])
    assert loss == pytest.approx(-np.log(probs[:, 2]).sum(), abs=1e-12)


def test_random_instances_match_enumeration_and_finite_differences():
    rng = np.random.default_rng(3)
    worst_loss = worst_grad = 0.0
    for _ in range(60):
        T, K = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        L = int(rng.integers(0, 4))
        target = rng.integers(0, K - 1, size=L).tolist()
        if min_frames(target) > T:
            continue
        z = rng.normal(size=(T, K))
        probs = np.exp(log_softmax(z))
        loss, grad = ctc_loss_from_log_probs(log_softmax(z), target)
        worst_loss = max(worst_loss, abs(loss + math.log(ctc_brute_probability(probs, target, K - 1))))
        num = numerical_grad(lambda: ctc_loss_from_log_probs(log_softmax(z), target)[0], z)
        worst_grad = max(worst_grad, rel_error(grad, num))
    assert worst_loss <= 1e-8
    assert worst_grad <= 1e-4


def test_infeasible_target():
    with pytest.raises(InfeasibleTargetError):
        ctc_loss(np.full((2, 3), 1 / 3), [0, 0])


def test_out_of_range_target():
    with pytest.raises(InfeasibleTargetError):
        ctc_loss(np.full((4, 3), 1 / 3), [2])


def test_bad_distribution():
    with pytest.raises(InvalidDistributionError):
        ctc_loss(np.full((3, 3), 0.5), [0])


def test_greedy_decode_examples():
    h, i, blank = 0, 1, 2
    probs = np.eye(3)[[h, h, blank, i]]
    assert greedy_decode(probs) == [h, i]
    assert greedy_decode(np.eye(3)[[blank] * 4]) == []


def test_greedy_is_collapsed_argmax():
    rng = np.random.default_rng(4)
    for _ in range(100):
        p = random_probs(rng, 6, 4)
        assert tuple(greedy_decode(p)) == collapse_ref(p.argmax(axis=1).tolist(), 3)


def test_beam_never_worse_than_greedy():
    rng = np.random.default_rng(5)
    for _ in range(100):
        p = random_probs(rng, 5, 3)
        assert sequence_probability(p, beam_decode(p, 1)) >= sequence_probability(p, greedy_decode(p)) - 1e-15


def test_beam_exhaustive_finds_best_labeling():
    rng = np.random.default_rng(6)
    for _ in range(20):
        p = random_probs(rng, 3, 3)
        mass = labeling_masses(p, 2)
        best = max(mass.values())
        assert mass[tuple(beam_decode(p, 27))] == pytest.approx(best, abs=1e-14)


def test_beam_recovers_label_greedy_misses():
    # blank wins every frame, but the mass of "a" spread over paths beats it
    p = np.array([[0.4, 0.0, 0.6], [0.4, 0.0, 0.6]]) + 1e-12
    p /= p.sum(axis=1, keepdims=True)
    assert greedy_decode(p) == []
    mass = labeling_masses(p, 2)
    assert mass[(0,)] > mass[()]
    assert beam_decode(p, 4) == [0]


def test_batch_loss_is_mean_of_samples():
    rng = np.random.default_rng(7)
    logp = log_softmax(rng.normal(size=(3, 6, 4)))
    targets = [[0], [1, 2], []]
    mean, per, grad = batch_ctc_loss(logp, targets)
    assert mean == pytest.approx(per.mean())
    for b in range(3):
        loss, g = ctc_loss_from_log_probs(logp[b], targets[b])
        assert per[b] == loss
        np.testing.assert_allclose(grad[b], g / 3)
