"""Connectionist temporal classification: loss, gradient and decoders.

Frame distributions are ``(T, K)`` arrays whose last class ``K - 1`` is the
blank. Targets are id sequences in the order the frames see them (visual
left-to-right order, i.e. the stored right-to-left label tail).
"""
from __future__ import annotations

from collections import defaultdict
from typing import Sequence

import numpy as np

from rasm.errors import InfeasibleTargetError, InvalidDistributionError

NEG_INF = -np.inf


def collapse(path: Sequence[int], blank: int) -> list[int]:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for c in path:
        c = int(c)
        if c != prev and c != blank:
            out.append(c)
        prev = c
    return out


def min_frames(target: Sequence[int]) -> int:
    """Shortest input that can emit ``target``: one frame per label plus a
    separating blank between each pair of equal neighbours."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _check_target(target: Sequence[int], T: int, K: int) -> np.ndarray:
    tgt = np.asarray(target, dtype=np.int64).reshape(-1)
    blank = K - 1
    if np.any((tgt < 0) | (tgt >= blank)):
        raise InfeasibleTargetError(f"target ids must lie in [0, {blank}); blank is {blank}")
    if min_frames(tgt.tolist()) > T:
        raise InfeasibleTargetError(
            f"target of length {len(tgt)} needs {min_frames(tgt.tolist())} frames, only {T} available")
    return tgt


def log_softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _forward_backward(logp: np.ndarray, tgt: np.ndarray):
    """Log-space alpha/beta over the blank-interleaved target."""
    T, K = logp.shape
    blank = K - 1
    ext = np.full(2 * len(tgt) + 1, blank, dtype=np.int64)
    ext[1::2] = tgt
    S = len(ext)
    # transitions s-2 -> s allowed only onto a label that differs from ext[s-2]
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    emit = logp[:, ext]
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b + emit[t]

    end = alpha[T - 1, S - 1]
    if S > 1:
        end = np.logaddexp(end, alpha[T - 1, S - 2])
    return ext, alpha, beta, end


def ctc_loss_from_log_probs(logp: np.ndarray, target: Sequence[int]):
    """Loss and gradient w.r.t. the pre-softmax scores, given log-softmax rows."""
    logp = np.asarray(logp, dtype=np.float64)
    T, K = logp.shape
    tgt = _check_target(target, T, K)
    ext, alpha, beta, log_like = _forward_backward(logp, tgt)
    # occupancy of class k at frame t: sum over s with ext[s] == k of
    # alpha*beta / y, normalized by the total likelihood
    with np.errstate(invalid="ignore"):
        ab = alpha + beta - logp[:, ext] - log_like
    # zero-probability states give -inf - -inf; they carry no occupancy
    ab[np.isnan(ab)] = NEG_INF
    occ = np.zeros((T, K))
    for k in np.unique(ext):
        cols = ab[:, ext == k]
        m = cols.max(axis=1)
        finite = np.isfinite(m)
        occ[finite, k] = np.exp(m[finite] + np.log(np.exp(cols[finite] - m[finite, None]).sum(axis=1)))
    grad = np.exp(logp) - occ
    return max(0.0, float(-log_like)), grad


def ctc_loss(probs: np.ndarray, target: Sequence[int], atol: float = 1e-6):
    """Negative log-likelihood of ``target`` summed over all alignments.

    Returns ``(loss, grad)`` where ``grad`` is the derivative of the loss
    with respect to the scores that produced ``probs`` through a softmax.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] < 2 or probs.shape[0] < 1:
        raise InvalidDistributionError(f"expected a (T, K>=2) distribution, got shape {probs.shape}")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > atol):
        raise InvalidDistributionError("every frame must be a probability distribution")
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    return ctc_loss_from_log_probs(logp, target)


def sequence_probability(probs: np.ndarray, target: Sequence[int]) -> float:
    """Total probability of emitting ``target``; zero when infeasible."""
    T, K = np.shape(probs)
    if min_frames(list(target)) > T:
        return 0.0
    loss, _ = ctc_loss(probs, target)
    return float(np.exp(-loss))


def greedy_decode(probs: np.ndarray) -> list[int]:
    """Collapse the per-frame argmax path (ties go to the lowest id)."""
    probs = np.asarray(probs)
    return collapse(np.argmax(probs, axis=1), probs.shape[1] - 1)


def beam_decode(probs: np.ndarray, beam_width: int = 8) -> list[int]:
    """Prefix beam search over collapsed labelings.

    Each prefix keeps separate mass for paths ending in a blank and in its
    last label, so alignments that collapse to the same prefix are merged.
    The survivors and the greedy labeling are rescored exactly and the most
    probable one is returned.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    probs = np.asarray(probs, dtype=np.float64)
    T, K = probs.shape
    blank = K - 1
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    # prefix -> (log mass ending in blank, log mass ending in last label)
    beams: dict[tuple, tuple[float, float]] = {(): (0.0, NEG_INF)}
    for t in range(T):
        nxt: dict[tuple, list[float]] = defaultdict(lambda: [NEG_INF, NEG_INF])
        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            entry = nxt[prefix]
            entry[0] = np.logaddexp(entry[0], total + logp[t, blank])
            if prefix:
                entry[1] = np.logaddexp(entry[1], pnb + logp[t, prefix[-1]])
            for k in range(K - 1):
                ext = prefix + (k,)
                e = nxt[ext]
                if prefix and prefix[-1] == k:
                    # a repeat only extends through an intervening blank
                    e[1] = np.logaddexp(e[1], pb + logp[t, k])
                else:
                    e[1] = np.logaddexp(e[1], total + logp[t, k])
        ranked = sorted(nxt.items(), key=lambda kv: (-np.logaddexp(*kv[1]), kv[0]))
        beams = {p: (v[0], v[1]) for p, v in ranked[:beam_width]}

    candidates = set(beams) | {tuple(greedy_decode(probs))}
    scored = [(sequence_probability(probs, list(c)), c) for c in candidates]
    # highest exact probability, then shortest/lexicographically smallest
    scored.sort(key=lambda sc: (-sc[0], len(sc[1]), sc[1]))
    return list(scored[0][1])


def batch_ctc_loss(log_probs: np.ndarray, targets: Sequence[Sequence[int]]):
    """Mean loss over a batch of ``(B, T, K)`` log-softmax outputs.

    Returns the mean loss, the per-sample losses and the gradient with
    respect to the ``(B, T, K)`` pre-softmax scores of the mean.
    """
    B = log_probs.shape[0]
    losses = np.zeros(B)
    grad = np.zeros(log_probs.shape, dtype=np.float64)
    for i in range(B):
        losses[i], grad[i] = ctc_loss_from_log_probs(log_probs[i], targets[i])
    return float(losses.mean()), losses, grad / B
