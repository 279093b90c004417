"""Backward labeling of segmented, outcome-labeled episodes.

The final segment of an episode takes the absorbing label declared by the
outcome (1 for discharge, N for ICU transfer). Earlier segments are labeled
walking backward: each must be a transient neighbour of the next label, and
when both neighbours are possible the one whose exemplar observations are
closest in energy divergence wins.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .changepoint import Segmentation, energy_divergence

log = logging.getLogger(__name__)

FORCED = "forced"
CONFLICT = "conflict_resolved"


@dataclass
class LabeledEpisode:
    episode: str
    segmentation: Segmentation
    labels: list[int]
    provenance: list[str]
    relabel_failed: bool = False
    message: str = ""

    @property
    def durations(self) -> list[int]:
        return self.segmentation.lengths

    def step_labels(self) -> np.ndarray:
        return np.repeat(np.asarray(self.labels, dtype=int), self.durations)


@dataclass
class ExemplarPool:
    """Observations of already-labeled segments, pooled per label.

    Only the most recent ``max_points`` rows per label are kept so pool
    comparisons stay cheap on large cohorts.
    """

    max_points: int = 256
    _rows: dict = field(default_factory=dict)

    def add(self, episode: LabeledEpisode, Y) -> None:
        if episode.relabel_failed:
            return
        Y = np.asarray(Y, dtype=float)
        for seg, lab in zip(episode.segmentation.segments, episode.labels):
            rows = Y[seg.start:seg.end]
            old = self._rows.get(lab)
            new = rows if old is None else np.vstack([old, rows])
            self._rows[lab] = new[-self.max_points:]

    def get(self, label: int):
        return self._rows.get(label)


def label_absorbing(n_segments: int, F: int, N: int) -> list:
    """Partial labels with only the final (absorbing) segment filled in."""
    if n_segments < 1:
        raise ValueError("an episode needs at least one segment")
    if F not in (0, 1):
        raise ValueError(f"outcome label must be 0 or 1, got {F}")
    labels = [None] * n_segments
    labels[-1] = N if F == 1 else 1
    return labels


def _viable_sets(N: int, n_positions: int) -> list[set]:
    # viable[k]: transient labels that admit k transient predecessors
    transient = set(range(2, N))
    viable = [set(transient)]
    for _ in range(1, n_positions):
        prev = viable[-1]
        viable.append({s for s in transient if (s - 1) in prev or (s + 1) in prev})
    return viable


def backward_label(Y, segmentation: Segmentation, partial: list, N: int, zeta: float = 1.0,
                   pool: ExemplarPool | None = None, episode: str | None = None) -> LabeledEpisode:
    """Fill in transient labels from the end of the episode backward."""
    if N < 3:
        raise ValueError("N must be >= 3")
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    ep = episode if episode is not None else segmentation.episode
    segs = segmentation.segments
    ns = len(segs)
    if len(partial) != ns or partial[-1] not in (1, N):
        raise ValueError("the final segment must carry an absorbing label")
    labels = list(partial)
    prov = [None] * ns
    prov[-1] = FORCED
    viable = _viable_sets(N, ns)

    for n in range(ns - 2, -1, -1):
        nxt = labels[n + 1]
        cands = [c for c in (nxt - 1, nxt + 1) if 1 < c < N and c in viable[n]]
        if not cands:
            msg = f"no legal labeling for {ns} segments ending in state {labels[-1]}"
            log.info("episode %s: %s", ep, msg)
            return LabeledEpisode(ep, segmentation, [], [], relabel_failed=True, message=msg)
        if len(cands) == 1:
            labels[n], prov[n] = cands[0], FORCED
            continue
        rows = Y[segs[n].start:segs[n].end]
        scores = []
        for c in cands:
            exemplar = None
            for m in range(n + 1, ns):
                if labels[m] == c:
                    exemplar = Y[segs[m].start:segs[m].end]
                    break
            if exemplar is None and pool is not None:
                exemplar = pool.get(c)
            scores.append(np.inf if exemplar is None else energy_divergence(rows, exemplar, zeta))
        # ties (including no exemplars at all) go to the lower-severity state
        labels[n] = cands[int(np.argmin(scores))] if np.isfinite(min(scores)) else min(cands)
        prov[n] = CONFLICT
    return LabeledEpisode(ep, segmentation, labels, prov)


def label_episodes(episodes, N: int, zeta: float = 1.0) -> list[LabeledEpisode]:
    """Label ``(id, Y, segmentation, F)`` tuples in ascending id order.

    Episodes processed earlier feed the shared exemplar pool used by later
    ones; the returned list follows the input order.
    """
    episodes = list(episodes)
    pool = ExemplarPool()
    out = {}
    for eid, Y, seg, F in sorted(episodes, key=lambda e: e[0]):
        partial = label_absorbing(len(seg), F, N)
        lab = backward_label(Y, seg, partial, N, zeta, pool, episode=eid)
        pool.add(lab, Y)
        out[eid] = lab
    return [out[e[0]] for e in episodes]


def max_transient_segments(N: int) -> int | None:
    """Largest number of transient segments a legal path can have (None: unbounded)."""
    return 1 if N == 3 else None


def segment_majority_accuracy(labeled: list[LabeledEpisode], true_step_labels: list) -> float:
    """Fraction of segments whose label equals the majority true label inside it."""
    hit = total = 0
    for lab, truth in zip(labeled, true_step_labels):
        if lab.relabel_failed:
            continue
        truth = np.asarray(truth, dtype=int)
        for seg, s in zip(lab.segmentation.segments, lab.labels):
            vals, counts = np.unique(truth[seg.start:seg.end], return_counts=True)
            hit += int(vals[np.argmax(counts)] == s)
            total += 1
    return hit / total if total else float("nan")
