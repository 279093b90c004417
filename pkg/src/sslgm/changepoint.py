"""Energy-statistic change-point detection (E-divisive and E-Agglo).

Time indices are 0-based and segments half-open: a change point ``c`` means a
new segment starts at row ``c``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigurationError


@dataclass(frozen=True)
class SegmentationConfig:
    zeta: float = 1.0
    min_size: int = 4
    n_permutations: int = 199
    significance: float = 0.05
    max_changepoints: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.zeta < 2.0:
            raise ConfigurationError(f"zeta must lie in (0, 2), got {self.zeta}")
        if self.min_size < 2:
            raise ConfigurationError("min_size must be >= 2")
        if self.n_permutations < 1:
            raise ConfigurationError("n_permutations must be >= 1")
        if not 0.0 < self.significance < 1.0:
            raise ConfigurationError("significance must lie in (0, 1)")
        if self.max_changepoints < 0:
            raise ConfigurationError("max_changepoints must be >= 0")


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    episode: str | None = None

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class Segmentation:
    """Contiguous, disjoint segments covering ``[0, T)``."""

    boundaries: tuple[int, ...]
    episode: str | None = None

    def __post_init__(self):
        b = self.boundaries
        if len(b) < 2 or b[0] != 0 or any(x >= y for x, y in zip(b[:-1], b[1:])):
            raise ValueError(f"invalid segment boundaries {b}")

    @classmethod
    def from_changepoints(cls, changepoints, T: int, episode=None) -> "Segmentation":
        return cls(tuple([0, *sorted(int(c) for c in changepoints), int(T)]), episode)

    @property
    def changepoints(self) -> list[int]:
        return list(self.boundaries[1:-1])

    @property
    def segments(self) -> list[Segment]:
        b = self.boundaries
        return [Segment(s, e, self.episode) for s, e in zip(b[:-1], b[1:])]

    @property
    def lengths(self) -> list[int]:
        return [e - s for s, e in zip(self.boundaries[:-1], self.boundaries[1:])]

    def __len__(self):
        return len(self.boundaries) - 1


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def _check_zeta(zeta):
    if not 0.0 < zeta < 2.0:
        raise ConfigurationError(f"zeta must lie in (0, 2), got {zeta}")


def distance_power(X, Y=None, zeta: float = 1.0) -> np.ndarray:
    X = _as_points(X)
    D = cdist(X, X if Y is None else _as_points(Y))
    return D if zeta == 1.0 else D ** zeta


def energy_divergence(X1, X2, zeta: float = 1.0) -> float:
    """Energy divergence between two samples.

    Twice the mean cross distance minus the mean within-sample distance of
    each sample (over unordered pairs), distances raised to ``zeta``. A
    within-sample term is zero for a sample with fewer than two points.
    """
    _check_zeta(zeta)
    X1, X2 = _as_points(X1), _as_points(X2)
    u1, u2 = len(X1), len(X2)
    if u1 < 1 or u2 < 1:
        raise ValueError("both samples need at least one point")
    # sorted sums make the result exactly symmetric in (X1, X2)
    cross = np.sort(distance_power(X1, X2, zeta), axis=None).sum()
    # full-matrix sums count each unordered pair twice
    w1 = distance_power(X1, zeta=zeta).sum() / (u1 * (u1 - 1)) if u1 > 1 else 0.0
    w2 = distance_power(X2, zeta=zeta).sum() / (u2 * (u2 - 1)) if u2 > 1 else 0.0
    out = 2.0 * cross / (u1 * u2) - (w1 + w2)
    return float(out)


def scaled_energy(X1, X2, zeta: float = 1.0) -> float:
    """Two-sample test statistic ``u1 u2 / (u1 + u2) * energy_divergence``."""
    u1, u2 = len(_as_points(X1)), len(_as_points(X2))
    return u1 * u2 / (u1 + u2) * energy_divergence(X1, X2, zeta)


def _prefix(D: np.ndarray) -> np.ndarray:
    S = np.zeros((D.shape[0] + 1, D.shape[1] + 1))
    S[1:, 1:] = D.cumsum(0).cumsum(1)
    return S


def _block(S, a1, a2, b1, b2):
    return S[a2, b2] - S[a1, b2] - S[a2, b1] + S[a1, b1]


def _q_between(S, s1, e1, s2, e2) -> float:
    n1, n2 = e1 - s1, e2 - s2
    e = 2.0 * _block(S, s1, e1, s2, e2) / (n1 * n2)
    if n1 > 1:
        e -= _block(S, s1, e1, s1, e1) / (n1 * (n1 - 1))
    if n2 > 1:
        e -= _block(S, s2, e2, s2, e2) / (n2 * (n2 - 1))
    return n1 * n2 / (n1 + n2) * e


def _best_split(D: np.ndarray, min_size: int) -> tuple[int, float]:
    """Split ``tau`` of a segment maximizing the scaled statistic."""
    U = D.shape[0]
    S = _prefix(D)
    tau = np.arange(min_size, U - min_size + 1)
    n1 = tau.astype(float)
    n2 = U - n1
    w1 = S[tau, tau]
    cross = S[tau, U] - w1
    w2 = S[U, U] - 2.0 * S[tau, U] + w1
    e = 2.0 * cross / (n1 * n2) - w1 / (n1 * (n1 - 1)) - w2 / (n2 * (n2 - 1))
    q = n1 * n2 / U * e
    k = int(np.argmax(q))
    return int(tau[k]), float(q[k])


def e_divisive(Y, config: SegmentationConfig | None = None) -> list[int]:
    """Hierarchical divisive segmentation with permutation testing.

    Each round takes the best split over all current segments; the split is
    kept if its permutation p-value is at most ``config.significance``.
    Permutations come from a generator seeded with ``config.seed``.
    """
    cfg = config or SegmentationConfig()
    Y = _as_points(Y)
    T = len(Y)
    if T < 2 * cfg.min_size:
        warnings.warn(f"series of length {T} is too short to segment (min_size={cfg.min_size})",
                      RuntimeWarning, stacklevel=2)
        return []
    D = distance_power(Y, zeta=cfg.zeta)
    rng = np.random.default_rng(cfg.seed)
    bounds = [0, T]
    cps: list[int] = []
    while len(cps) < cfg.max_changepoints:
        best = None
        for s, e in zip(bounds[:-1], bounds[1:]):
            if e - s < 2 * cfg.min_size:
                continue
            tau, q = _best_split(D[s:e, s:e], cfg.min_size)
            if best is None or q > best[2]:
                best = (s, e, q, s + tau)
        if best is None:
            break
        s, e, q_obs, cp = best
        Dseg = D[s:e, s:e]
        exceed = 0
        for _ in range(cfg.n_permutations):
            p = rng.permutation(e - s)
            if _best_split(Dseg[np.ix_(p, p)], cfg.min_size)[1] >= q_obs:
                exceed += 1
        pval = (exceed + 1) / (cfg.n_permutations + 1)
        if pval > cfg.significance:
            break
        cps.append(cp)
        bounds = sorted(bounds + [cp])
    return sorted(cps)


def goodness_of_fit(S: np.ndarray, bounds) -> float:
    """Sum of scaled statistics over adjacent segment pairs."""
    return float(sum(_q_between(S, a, b, b, c)
                     for a, b, c in zip(bounds[:-2], bounds[1:-1], bounds[2:])))


def e_agglo(Y, initial_segments, config: SegmentationConfig | None = None) -> Segmentation:
    """Greedy agglomerative merging of adjacent segments.

    ``initial_segments`` is a Segmentation or a list of change points. At each
    step the adjacent pair whose merge yields the highest goodness of fit is
    merged; the segmentation with the highest goodness of fit along the way
    is returned (ties favour fewer segments).
    """
    cfg = config or SegmentationConfig()
    Y = _as_points(Y)
    T = len(Y)
    if isinstance(initial_segments, Segmentation):
        seg = initial_segments
    else:
        seg = Segmentation.from_changepoints(initial_segments, T)
    if seg.boundaries[-1] != T:
        raise ValueError("initial segments do not cover the series")
    if len(seg) < 2:
        return seg
    S = _prefix(distance_power(Y, zeta=cfg.zeta))
    bounds = list(seg.boundaries)
    best_bounds, best_fit = list(bounds), goodness_of_fit(S, bounds)
    while len(bounds) > 2:
        cand = None
        for k in range(1, len(bounds) - 1):
            trial = bounds[:k] + bounds[k + 1:]
            fit = goodness_of_fit(S, trial)
            if cand is None or fit > cand[0]:
                cand = (fit, trial)
        fit, bounds = cand
        if fit >= best_fit:
            best_fit, best_bounds = fit, list(bounds)
    return Segmentation(tuple(best_bounds), seg.episode)


def segment_series(Y, config: SegmentationConfig | None = None, max_segments: int | None = None,
                   episode=None) -> Segmentation:
    """E-divisive proposals refined by E-Agglo."""
    cfg = config or SegmentationConfig()
    Y = _as_points(Y)
    T = len(Y)
    if max_segments is not None:
        cfg = SegmentationConfig(cfg.zeta, cfg.min_size, cfg.n_permutations, cfg.significance,
                                 min(cfg.max_changepoints, max_segments - 1), cfg.seed)
    if cfg.max_changepoints == 0 or T < 2 * cfg.min_size:
        return Segmentation((0, T), episode)
    cps = e_divisive(Y, cfg)
    seg = Segmentation.from_changepoints(cps, T, episode)
    return e_agglo(Y, seg, cfg)
