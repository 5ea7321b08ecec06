"""Round metrics over execution traces.

All functions work on the abstract shape of a trace: its length and, for
each event, the indices of the events whose messages it receives.  They
accept either an :class:`~lasim.trace.ExecutionTrace` or a
:class:`Shape` built directly from hops.

* ``assign_ira``: the iterative assignment, implemented line by line.
* ``assign_ntr`` / ``latency_between``: round boundaries as last receivers.
* ``assign_lcc``: longest causal chain labels.
* ``find_holes``: cuts that no delivered message crosses.
* ``min_hop_cover`` / ``min_hop_cover_between``: smallest set of hops whose
  closed intervals cover the trace (or a window of it).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

from lasim.trace import ExecutionTrace

# above this many maximal hops only the greedy cover and its certificate are used
EXHAUSTIVE_LIMIT = 8


class CoveredRequired(ValueError):
    """The metric needs a covered trace (or window) and a hole was found."""

    def __init__(self, hole: tuple[int, int]):
        super().__init__(f"execution has a hole between events {hole[0]} and {hole[1]}")
        self.hole = hole


@dataclass(frozen=True)
class Shape:
    """Length plus, per event, the sending events of its received messages."""
    sources: tuple[tuple[int, ...], ...]

    @classmethod
    def from_hops(cls, length: int, hops: Sequence[tuple[int, int]]) -> Shape:
        src: list[list[int]] = [[] for _ in range(length)]
        for s, r in hops:
            if not 0 <= s < r < length:
                raise ValueError(f"hop ({s}, {r}) does not go forward inside {length} events")
            src[r].append(s)
        return cls(tuple(tuple(sorted(x)) for x in src))

    def __len__(self) -> int:
        return len(self.sources)

    def hops(self) -> list[tuple[int, int]]:
        return sorted({(s, r) for r, ss in enumerate(self.sources) for s in ss})


def shape_of(t: ExecutionTrace | Shape) -> Shape:
    if isinstance(t, Shape):
        return t
    return Shape(tuple(tuple(sorted(t.sources(i))) for i in range(len(t.events))))


@dataclass(frozen=True)
class RoundAssignment:
    rounds: tuple[int, ...]
    # round r -> index of e*_r
    boundaries: tuple[int, ...] = ()

    def __getitem__(self, i: int) -> int:
        return self.rounds[i]

    @property
    def count(self) -> int:
        return self.rounds[-1] if self.rounds else 0


@dataclass(frozen=True)
class HopCover:
    k: int
    hops: tuple[tuple[int, int], ...]
    interval: tuple[int, int]
    method: str  # "exhaustive" | "greedy"
    # greedy only: points no single hop can cover two of
    certificate: tuple[float, ...] = ()


# iterative round assignment ------------------------------------------------

def assign_ira(t: ExecutionTrace | Shape, start: int = 0) -> RoundAssignment:
    """Iterative assignment; events up to ``start`` get round 0 and ``start`` is e*_0."""
    sh = shape_of(t)
    L = len(sh)
    if L == 0:
        return RoundAssignment((), ())
    if not 0 <= start < L:
        raise IndexError(f"start event {start} outside 0..{L - 1}")
    rounds = [0] * L
    star = {0: start}
    r = 0
    for i in range(start + 1, L):
        src = sh.sources[i]
        if not src:
            rounds[i] = r
            continue
        j = min(src)  # oldest sending event
        rp = rounds[j]
        e = max(star[rp], j)
        rounds[e + 1:i + 1] = [rp + 1] * (i - e)
        star[rp + 1] = i
        r = rp + 1
    return RoundAssignment(tuple(rounds), tuple(star[k] for k in sorted(star) if k <= r))


def ira_latency(t: ExecutionTrace | Shape, i: int, j: int) -> int:
    if j < i:
        raise ValueError(f"event {j} precedes event {i}")
    return assign_ira(t, start=i).rounds[j]


# last-receiver rounds ------------------------------------------------------

def _reach(sh: Shape) -> list[int]:
    """reach[l] = last event receiving a message sent at or before l (or -1)."""
    L = len(sh)
    last_recv = [-1] * L
    for r, ss in enumerate(sh.sources):
        for s in ss:
            if r > last_recv[s]:
                last_recv[s] = r
    out, acc = [], -1
    for l in range(L):
        acc = max(acc, last_recv[l])
        out.append(acc)
    return out


def find_holes(t: ExecutionTrace | Shape) -> list[tuple[int, int]]:
    """Adjacent pairs (l, l+1) such that no message sent up to l is received after l."""
    sh = shape_of(t)
    reach = _reach(sh)
    return [(l, l + 1) for l in range(len(sh) - 1) if reach[l] <= l]


def _boundaries(sh: Shape, start: int, end: int) -> list[int]:
    reach = _reach(sh)
    stars = [start]
    while stars[-1] < end:
        nxt = reach[stars[-1]]
        if nxt <= stars[-1]:
            raise CoveredRequired((stars[-1], stars[-1] + 1))
        stars.append(nxt)
    return stars


def _rounds_from_boundaries(L: int, stars: list[int]) -> list[int]:
    rounds = [0] * L
    for r in range(1, len(stars)):
        lo, hi = stars[r - 1] + 1, min(stars[r], L - 1)
        rounds[lo:hi + 1] = [r] * (hi - lo + 1)
    return rounds


def assign_ntr(t: ExecutionTrace | Shape) -> RoundAssignment:
    """Round r runs from after e*_{r-1} to e*_r, the last receiver of round r-1 messages."""
    sh = shape_of(t)
    L = len(sh)
    if L == 0:
        return RoundAssignment((), ())
    stars = _boundaries(sh, 0, L - 1)
    return RoundAssignment(tuple(_rounds_from_boundaries(L, stars)), tuple(stars))


def latency_between(t: ExecutionTrace | Shape, i: int, j: int) -> int:
    """Round of event ``j`` when every event up to ``i`` is put in round 0."""
    sh = shape_of(t)
    L = len(sh)
    if not (0 <= i < L and 0 <= j < L):
        raise IndexError(f"events ({i}, {j}) outside 0..{L - 1}")
    if j < i:
        raise ValueError(f"event {j} precedes event {i}")
    return len(_boundaries(sh, i, j)) - 1


def naive_round_difference(t: ExecutionTrace | Shape, i: int, j: int) -> int:
    r = assign_ntr(t).rounds
    return r[j] - r[i]


# longest causal chain ------------------------------------------------------

def assign_lcc(t: ExecutionTrace | Shape) -> RoundAssignment:
    """Label = 1 + max label over sending events, 1 for an event that receives nothing."""
    sh = shape_of(t)
    labels: list[int] = []
    for ss in sh.sources:
        labels.append(1 + max((labels[s] for s in ss), default=0))
    return RoundAssignment(tuple(labels), ())


def lcc_count(t: ExecutionTrace | Shape) -> int:
    """Number of message hops on the longest causal chain."""
    labels = assign_lcc(t).rounds
    return max(labels) - 1 if labels else 0


# hop covers ----------------------------------------------------------------

def _covers(intervals: Sequence[tuple[int, int]], a: int, b: int) -> bool:
    """Do the closed real intervals contain all of [a, b]?"""
    reach = a
    for s, r in sorted(intervals):
        if s > reach:
            break
        reach = max(reach, r)
        if reach >= b:
            return True
    return reach >= b


def _maximal(hops: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Hops whose interval is not contained in another hop's interval."""
    uniq = sorted(set(hops), key=lambda h: (h[0], -h[1]))
    out: list[tuple[int, int]] = []
    best = -1
    for s, r in uniq:
        if r > best:
            out.append((s, r))
            best = r
    return out


def _greedy(hops: Sequence[tuple[int, int]], a: int, b: int) -> tuple[list[tuple[int, int]], list[float]]:
    chosen: list[tuple[int, int]] = []
    cert: list[float] = [float(a)]
    p = a
    while p < b:
        cand = [h for h in hops if h[0] <= p and h[1] > p]
        if not cand:
            raise CoveredRequired((p, p + 1))
        h = max(cand, key=lambda x: (x[1], -x[0]))
        chosen.append(h)
        p = h[1]
        if p < b:
            cert.append(p + 0.5)
    return chosen, cert


def _check_certificate(hops: Sequence[tuple[int, int]], points: Sequence[float]) -> bool:
    for s, r in hops:
        if sum(1 for x in points if s <= x <= r) > 1:
            return False
    return True


def _cover(sh: Shape, a: int, b: int) -> HopCover:
    """Minimum cover of [a, b]; greedy, proven optimal by a disjointness certificate.

    The certificate is one point per chosen hop such that no hop contains two
    of them, so every cover needs at least that many hops.  Small instances
    are also cross-checked by exhaustive search.
    """
    if a == b:
        return HopCover(0, (), (a, b), "exhaustive")
    hops = _maximal([h for h in sh.hops() if h[1] > a and h[0] < b])
    greedy, cert = _greedy(hops, a, b)  # raises on a hole
    if not _check_certificate(hops, cert) or len(cert) != len(greedy):
        raise AssertionError("greedy cover failed its optimality certificate")
    if len(hops) <= EXHAUSTIVE_LIMIT:
        for k in range(1, len(greedy) + 1):
            for combo in combinations(hops, k):
                if _covers(combo, a, b):
                    if k != len(greedy):
                        raise AssertionError("exhaustive search beat the certified greedy cover")
                    return HopCover(k, tuple(combo), (a, b), "exhaustive")
        raise AssertionError("greedy found a cover that exhaustive search missed")
    return HopCover(len(greedy), tuple(greedy), (a, b), "greedy", tuple(cert))


def min_hop_cover(t: ExecutionTrace | Shape) -> HopCover:
    sh = shape_of(t)
    if len(sh) == 0:
        return HopCover(0, (), (0, 0), "exhaustive")
    holes = find_holes(sh)
    if holes:
        raise CoveredRequired(holes[0])
    return _cover(sh, 0, len(sh) - 1)


def min_hop_cover_between(t: ExecutionTrace | Shape, i: int, j: int) -> HopCover:
    sh = shape_of(t)
    if j < i:
        raise ValueError(f"event {j} precedes event {i}")
    return _cover(sh, i, j)


@dataclass(frozen=True)
class MetricSummary:
    events: int
    ira: int
    ntr: int | None
    lcc: int
    hop_cover: int | None
    holes: tuple[tuple[int, int], ...]


def summarize(t: ExecutionTrace | Shape) -> MetricSummary:
    sh = shape_of(t)
    holes = tuple(find_holes(sh))
    ntr = cover = None
    if not holes and len(sh):
        ntr = assign_ntr(sh).count
        cover = min_hop_cover(sh).k
    return MetricSummary(len(sh), assign_ira(sh).count if len(sh) else 0, ntr, lcc_count(sh), cover, holes)


def round_table(t: ExecutionTrace | Shape) -> list[dict[str, int | None]]:
    """Per-event rounds under each metric; NTR is ``None`` throughout on a trace with a hole."""
    sh = shape_of(t)
    if not len(sh):
        return []
    ira = assign_ira(sh).rounds
    lcc = assign_lcc(sh).rounds
    ntr = assign_ntr(sh).rounds if not find_holes(sh) else [None] * len(sh)
    return [{"event": i, "ira": ira[i], "ntr": ntr[i], "lcc": lcc[i]} for i in range(len(sh))]
