"""Explicit-duration semi-Markov chain over clinical super-states.

States are numbered 1..N in public data (labels, sequences); array index
``i`` holds state ``i + 1``. State 1 (stability) and state N (deterioration)
are absorbing; transient states move to an adjacent state after a dwell of
``1 + NegBinomial(r, q)`` steps.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConfigurationError

NB_MAX_ITER = 100
NB_R_MAX = 1e6


@dataclass(eq=False)
class ChainParams:
    """Gambler's-ruin super-state chain with negative-binomial dwell times.

    ``r`` and ``q`` hold the duration parameters per state; entries for the
    absorbing states are ignored and stored as NaN.
    """

    p0: np.ndarray
    P: np.ndarray
    r: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        N = len(self.p0)
        if N < 3:
            raise ConfigurationError("the chain needs at least 3 states")
        if self.P.shape != (N, N) or self.r.shape != (N,) or self.q.shape != (N,):
            raise ConfigurationError("chain parameter shapes are inconsistent")
        self.r[[0, N - 1]] = np.nan
        self.q[[0, N - 1]] = np.nan

    @property
    def N(self) -> int:
        return len(self.p0)

    @property
    def transient(self) -> range:
        """Array indices of the transient states."""
        return range(1, self.N - 1)

    @classmethod
    def gamblers_ruin(cls, p0, down, r, q) -> "ChainParams":
        """Build a chain from per-transient-state "move down" probabilities.

        ``down``, ``r`` and ``q`` have length N - 2 (one entry per transient
        state 2..N-1).
        """
        p0 = np.asarray(p0, dtype=float)
        N = len(p0)
        down = np.broadcast_to(np.asarray(down, float), (N - 2,))
        P = np.zeros((N, N))
        P[0, 0] = P[-1, -1] = 1.0
        for k, i in enumerate(range(1, N - 1)):
            P[i, i - 1] = down[k]
            P[i, i + 1] = 1.0 - down[k]
        rr = np.full(N, np.nan)
        qq = np.full(N, np.nan)
        rr[1:-1] = np.broadcast_to(np.asarray(r, float), (N - 2,))
        qq[1:-1] = np.broadcast_to(np.asarray(q, float), (N - 2,))
        return cls(p0, P, rr, qq)

    def check(self, tol: float = 1e-9) -> None:
        N, P = self.N, self.P
        if abs(self.p0.sum() - 1.0) > tol or np.any(self.p0 < -tol):
            raise ConfigurationError("p0 must be a probability vector")
        if np.any(P < -tol) or np.any(P > 1 + tol):
            raise ConfigurationError("transition probabilities must lie in [0, 1]")
        if np.any(np.abs(P.sum(axis=1) - 1.0) > tol):
            raise ConfigurationError("transition rows must sum to 1")
        i, j = np.indices(P.shape)
        if np.any(P[np.abs(i - j) > 1] != 0):
            raise ConfigurationError("only adjacent transitions are allowed")
        if P[0, 0] != 1.0 or P[-1, -1] != 1.0:
            raise ConfigurationError("states 1 and N must be absorbing")
        if np.any(np.diag(P)[1:-1] != 0):
            raise ConfigurationError("transient states cannot self-transition")
        for s in self.transient:
            if not (self.r[s] > 0 and 0 < self.q[s] <= 1):
                raise ConfigurationError(f"invalid duration parameters for state {s + 1}")


@dataclass
class SuperStateSeq:
    states: list[int]
    durations: list[int]

    def check(self, N: int) -> None:
        """Raise ValueError unless the sequence is a legal absorbed path."""
        s, d = self.states, self.durations
        if len(s) != len(d) or not s:
            raise ValueError("states and durations must be non-empty and equally long")
        if any(int(x) < 1 for x in d):
            raise ValueError("durations must be positive")
        if s[-1] not in (1, N):
            raise ValueError("the final super-state must be absorbing")
        for a in s[:-1]:
            if not 1 < a < N:
                raise ValueError("absorbing state visited before the end")
        for a, b in zip(s[:-1], s[1:]):
            if abs(a - b) != 1:
                raise ValueError("consecutive super-states must be adjacent")

    def expand(self) -> np.ndarray:
        """Per-time-step state labels."""
        return np.repeat(np.asarray(self.states, dtype=int), self.durations)


def nb_logpmf(k, r: float, q: float):
    """log pmf of the duration ``k >= 1`` (shifted negative binomial)."""
    k = np.asarray(k, dtype=float)
    j = k - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (special.gammaln(j + r) - special.gammaln(j + 1.0) - special.gammaln(r)
               + r * np.log(q) + special.xlogy(j, 1.0 - q))
    return np.where(k >= 1, out, -np.inf)


def nb_duration_pmf(k, r: float, q: float):
    """Probability that a super-state lasts ``k`` steps.

    The dwell time is ``1 + K`` with ``K`` negative binomial,
    ``P(K=j) = Gamma(j+r) / (j! Gamma(r)) q^r (1-q)^j``; ``r = 1`` gives the
    geometric case.
    """
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise ValueError("durations start at 1")
    out = np.exp(nb_logpmf(k_arr, r, q))
    return float(out) if out.ndim == 0 else out


def nb_survival(d_max: int, r: float, q: float) -> np.ndarray:
    """``P(T >= d)`` for d = 1..d_max."""
    pmf = nb_duration_pmf(np.arange(1, d_max + 1), r, q)
    return np.clip(1.0 - np.concatenate([[0.0], np.cumsum(pmf[:-1])]), 0.0, 1.0)


def nb_hazard(d_max: int, r: float, q: float) -> np.ndarray:
    """``P(T = d | T >= d)`` for d = 1..d_max."""
    pmf = nb_duration_pmf(np.arange(1, d_max + 1), r, q)
    surv = nb_survival(d_max, r, q)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(surv > 0, pmf / surv, 1.0)
    return np.clip(h, 0.0, 1.0)


@dataclass
class NBFit:
    r: float
    q: float
    boundary: bool = False
    n_iter: int = 0
    grad: tuple[float, float] = (0.0, 0.0)


def _nb_profile_derivs(r, k, w, W, m):
    qh = r / (r + m)
    d1 = np.sum(w * special.digamma(k + r)) - W * special.digamma(r) + W * np.log(qh)
    d2 = (np.sum(w * special.polygamma(1, k + r)) - W * special.polygamma(1, r)
          + W * (1.0 / r - 1.0 / (r + m)))
    return d1, d2


def fit_nb_mle(samples, weights=None, fix_r: float | None = None) -> NBFit:
    """Maximum-likelihood (r, q) for dwell times ``samples >= 1``.

    ``q`` is profiled out in closed form, ``q = r / (r + mean(K))``, and Newton
    steps are taken on ``log r``. Underdispersed or degenerate samples have no
    interior optimum; those return ``boundary=True`` with the geometric model
    (``r = 1``).
    """
    d = np.asarray(samples, dtype=float)
    if d.ndim != 1 or d.size < 1:
        raise ValueError("need at least one duration sample")
    if np.any(d < 1):
        raise ValueError("durations start at 1")
    w = np.ones_like(d) if weights is None else np.asarray(weights, dtype=float)
    keep = w > 0
    d, w = d[keep], w[keep]
    k = d - 1.0
    W = w.sum()
    m = float(np.sum(w * k) / W)

    if fix_r is not None:
        return NBFit(float(fix_r), float(fix_r / (fix_r + m)), boundary=False)
    if m == 0.0 or len(np.unique(d)) < 2:
        return NBFit(1.0, 1.0 / (m + 1.0), boundary=True)

    var = float(np.sum(w * (k - m) ** 2) / W)
    if var <= m:
        return NBFit(1.0, 1.0 / (m + 1.0), boundary=True)

    # method-of-moments start, Newton in log r
    x = math.log(min(max(m * m / (var - m), 1e-3), 1e3))
    d1 = 0.0
    it = 0
    for it in range(1, NB_MAX_ITER + 1):
        r = math.exp(x)
        d1, d2 = _nb_profile_derivs(r, k, w, W, m)
        g = d1 * r
        h = d2 * r * r + d1 * r
        if h < 0:
            step = -g / h
        else:
            step = 0.5 if g > 0 else -0.5
        step = max(min(step, 2.0), -2.0)
        x += step
        if x > math.log(NB_R_MAX):
            return NBFit(1.0, 1.0 / (m + 1.0), boundary=True, n_iter=it)
        d1, _ = _nb_profile_derivs(math.exp(x), k, w, W, m)
        if abs(d1) < 1e-9 or abs(step) < 1e-13:
            break
    r = math.exp(x)
    q = r / (r + m)
    d1, _ = _nb_profile_derivs(r, k, w, W, m)
    dq = W * r / q - np.sum(w * k) / (1.0 - q)
    return NBFit(r, q, boundary=False, n_iter=it, grad=(float(d1), float(dq)))


def nb_loglik(samples, r: float, q: float) -> float:
    return float(np.sum(nb_logpmf(np.asarray(samples, float), r, q)))


def absorption_probs(chain: ChainParams) -> np.ndarray:
    """Probability of eventual absorption in state N from each state."""
    N = chain.N
    h = np.zeros(N)
    h[-1] = 1.0
    if N > 2:
        idx = np.arange(1, N - 1)
        Q = chain.P[np.ix_(idx, idx)]
        b = chain.P[idx, N - 1]
        h[idx] = np.linalg.solve(np.eye(len(idx)) - Q, b)
    return h


def absorption_prob(chain: ChainParams, i: int) -> float:
    """Absorption probability in state N starting from state ``i`` (1-based)."""
    if not 1 <= i <= chain.N:
        raise ValueError(f"state {i} out of range 1..{chain.N}")
    return float(absorption_probs(chain)[i - 1])


def sample_superstate_path(chain: ChainParams, rng_seed=None,
                           max_total_steps: int = 10_000) -> tuple[SuperStateSeq, bool]:
    """Sample super-states until absorption.

    Absorbing states are recorded with a duration of one step. Returns the
    sequence and a flag that is True when the cumulative duration exceeded
    ``max_total_steps`` before absorption.
    """
    if max_total_steps < 1:
        raise ValueError("max_total_steps must be >= 1")
    rng = np.random.default_rng(rng_seed)
    N = chain.N
    s = int(rng.choice(N, p=chain.p0))
    states, durations = [], []
    total = 0
    while True:
        if s in (0, N - 1):
            states.append(s + 1)
            durations.append(1)
            total += 1
            return SuperStateSeq(states, durations), total > max_total_steps
        dur = 1 + int(rng.negative_binomial(chain.r[s], chain.q[s]))
        states.append(s + 1)
        durations.append(dur)
        total += dur
        if total > max_total_steps:
            return SuperStateSeq(states, durations), True
        s = int(rng.choice(N, p=chain.P[s]))


def sequence_loglik(chain: ChainParams, seq: SuperStateSeq) -> float:
    """log P(S, T) under the chain; absorbing dwell carries no likelihood."""
    s = np.asarray(seq.states) - 1
    ll = np.log(chain.p0[s[0]])
    for a, b in zip(s[:-1], s[1:]):
        ll += np.log(chain.P[a, b])
    for a, d in zip(s, seq.durations):
        if 0 < a < chain.N - 1:
            ll += float(nb_logpmf(d, chain.r[a], chain.q[a]))
    return float(ll)


def warn_boundary(state: int, fit: NBFit) -> None:
    if fit.boundary:
        warnings.warn(f"duration fit for state {state} hit the boundary; using geometric r=1",
                      RuntimeWarning, stacklevel=2)
