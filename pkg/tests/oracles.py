"""Brute-force reference implementations used to pin down the fast code.

Everything here enumerates the full path space in plain Python floats; keep
these independent of the library internals (only ``transition`` and tensor
reads are used) so they stay honest as oracles. Transition and emission
tables are copied out once per call because reading tensors inside the path
loop dominates the runtime otherwise.
"""
import itertools
import math


def all_paths(num_tags: int, length: int):
    return itertools.product(range(num_tags), repeat=length)


def _tables(head, emissions):
    em = emissions.detach().double().tolist()
    states = head.stop + 1
    trans = [
        [head.transition(prev, nxt) for nxt in range(states)]
        for prev in range(states)
    ]
    return em, trans, head.start, head.stop


def _score_path(em, trans, start, stop, path) -> float:
    total = trans[start][path[0]] + em[0][path[0]]
    for i in range(1, len(path)):
        total += trans[path[i - 1]][path[i]] + em[i][path[i]]
    return total + trans[path[-1]][stop]


def enum_path_score(head, emissions, path) -> float:
    em, trans, start, stop = _tables(head, emissions)
    return _score_path(em, trans, start, stop, path)


def enum_log_partition(head, emissions) -> float:
    L, T = emissions.shape
    em, trans, start, stop = _tables(head, emissions)
    scores = [
        _score_path(em, trans, start, stop, p) for p in all_paths(T, L)
    ]
    peak = max(scores)
    return peak + math.log(math.fsum(math.exp(s - peak) for s in scores))


def enum_best_path(head, emissions) -> list[int]:
    """Argmax path; ties prefer the path whose tags are smallest read from
    the right, matching the decoder's backtracking rule."""
    L, T = emissions.shape
    em, trans, start, stop = _tables(head, emissions)
    best = None
    best_score = -math.inf
    for path in all_paths(T, L):
        s = _score_path(em, trans, start, stop, path)
        if s > best_score or (
            s == best_score and list(reversed(path)) < list(reversed(best))
        ):
            best = path
            best_score = s
    return list(best)


def enum_marginals(head, emissions):
    """(L, T) posterior tag marginals by enumeration."""
    L, T = emissions.shape
    em, trans, start, stop = _tables(head, emissions)
    scored = [
        (p, _score_path(em, trans, start, stop, p)) for p in all_paths(T, L)
    ]
    peak = max(s for _, s in scored)
    log_z = peak + math.log(math.fsum(math.exp(s - peak) for _, s in scored))
    marg = [[0.0] * T for _ in range(L)]
    for path, s in scored:
        p = math.exp(s - log_z)
        for i, t in enumerate(path):
            marg[i][t] += p
    return marg
