"""Offline learning: segmentation, backward labeling, then EM.

Once every episode carries hard super-state labels the model is a
time-varying linear-Gaussian system, so dynamics are fitted with ordinary
Kalman/RTS-based EM. Episodes with identical per-step label sequences share
their covariance recursions and are filtered as one batch.
"""
from __future__ import annotations

import logging
import warnings
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from .changepoint import Segmentation, SegmentationConfig, segment_series
from .errors import ConfigurationError, LearningError
from .labeling import LabeledEpisode, label_episodes, max_transient_segments
from .lgm_core import StateDynamics, kalman_filter, rts_smoother, symmetrize
from .model import MixtureModel, SslgmParams, fit_softmax_regression
from .semi_markov import ChainParams, SuperStateSeq, fit_nb_mle, sequence_loglik

log = logging.getLogger(__name__)


@dataclass
class EMConfig:
    latent_dim: int | None = None
    max_iters: int = 200
    tol: float = 1e-6
    min_occupancy: int | None = None
    ridge: float = 1e-8
    restarts: int = 0
    seed: int = 0

    def occupancy_floor(self, latent_dim: int) -> int:
        return 10 * latent_dim if self.min_occupancy is None else self.min_occupancy


@dataclass
class FitConfig:
    N: int = 3
    G: int = 1
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    em: EMConfig = field(default_factory=EMConfig)
    beta: float = 0.5
    mixture_iters: int = 30
    mixture_tol: float = 1e-6
    weight_l2: float = 1e-3
    absorbing_steps: int = 1
    max_relabel_failed: float = 0.5

    def __post_init__(self):
        if self.N < 3:
            raise ConfigurationError("N must be >= 3")
        if self.G < 1:
            raise ConfigurationError("G must be >= 1")
        if self.absorbing_steps != 1:
            raise ConfigurationError("absorbing states occupy exactly one recorded step")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitEpisode:
    """One labeled episode ready for parameter estimation."""

    id: str
    Y: np.ndarray
    q: np.ndarray
    seq: SuperStateSeq

    @property
    def step_labels(self) -> np.ndarray:
        return self.seq.expand()


# --- transitions and durations ----------------------------------------------

def estimate_transitions(sequences, N: int, weights=None, beta: float = 0.5):
    """Initial and transition probabilities from labeled super-state sequences.

    Transient rows get add-``beta`` smoothing on their two neighbours; a
    transient state that is never left falls back to a uniform row and is
    reported in the returned flags.
    """
    sequences = [list(s) for s in sequences]
    if not sequences:
        raise ValueError("need at least one labeled sequence")
    w = np.ones(len(sequences)) if weights is None else np.asarray(weights, float)
    p0 = np.zeros(N)
    counts = np.zeros((N, N))
    for seq, wk in zip(sequences, w):
        p0[seq[0] - 1] += wk
        for a, b in zip(seq[:-1], seq[1:]):
            counts[a - 1, b - 1] += wk
    p0 /= p0.sum()
    P = np.zeros((N, N))
    P[0, 0] = P[-1, -1] = 1.0
    flags = []
    for i in range(1, N - 1):
        c = counts[i, [i - 1, i + 1]]
        if c.sum() <= 0:
            flags.append(f"state {i + 1} never left; uniform transition row")
            P[i, i - 1] = P[i, i + 1] = 0.5
            continue
        c = c + beta
        P[i, i - 1], P[i, i + 1] = c / c.sum()
    return p0, P, flags


def estimate_durations(sequences, N: int, weights=None):
    """Per-transient-state (r, q) fitted to observed dwell times."""
    w = np.ones(len(sequences)) if weights is None else np.asarray(weights, float)
    samples = defaultdict(list)
    sw = defaultdict(list)
    for seq, wk in zip(sequences, w):
        for s, d in zip(seq.states, seq.durations):
            if 1 < s < N:
                samples[s].append(d)
                sw[s].append(wk)
    r = np.full(N, np.nan)
    q = np.full(N, np.nan)
    flags = []
    for s in range(2, N):
        d = np.asarray(samples.get(s, []), float)
        ws = np.asarray(sw.get(s, []), float)
        if d.size == 0 or ws.sum() <= 0:
            r[s - 1], q[s - 1] = 1.0, 0.5
            flags.append(f"no dwell times for state {s}; default geometric q=0.5")
            continue
        fit = fit_nb_mle(d, ws)
        if fit.boundary:
            flags.append(f"dwell-time fit for state {s} on boundary; geometric fallback")
        r[s - 1], q[s - 1] = fit.r, min(fit.q, 1.0)
    return r, q, flags


# --- EM for the conditionally linear-Gaussian model ------------------------

@dataclass
class EMResult:
    dynamics: list[StateDynamics]
    loglik_trace: list[float]
    excluded_states: list[int]
    flags: list[str]
    converged: bool = False


def _group(episodes, weights):
    groups = defaultdict(list)
    for k, (Y, labels) in enumerate(episodes):
        groups[tuple(int(s) for s in labels)].append(k)
    out = []
    for key in sorted(groups, key=lambda k: (len(k), k)):
        idx = np.asarray(groups[key])
        Yb = np.stack([np.asarray(episodes[k][0], float) for k in idx])
        out.append((key, idx, Yb))
    return out


class _Stats:
    def __init__(self, N, mz, m):
        self.Szz = np.zeros((N, mz, mz))
        self.Syz = np.zeros((N, m, mz))
        self.Syy = np.zeros((N, m))
        self.n = np.zeros(N)
        self.S00 = np.zeros((N, mz, mz))
        self.S10 = np.zeros((N, mz, mz))
        self.S11 = np.zeros((N, mz, mz))
        self.nA = np.zeros(N)
        self.Sinit = np.zeros((N, mz, mz))
        self.ninit = np.zeros(N)


def episode_logliks(dynamics, groups, K: int) -> np.ndarray:
    """log p(Y | labels) for every episode."""
    ll = np.zeros(K)
    for key, idx, Yb in groups:
        ll[idx] = kalman_filter([dynamics[s - 1] for s in key], Yb).loglik
    return ll


def _estep(dynamics, groups, weights, N):
    mz, m = dynamics[0].latent_dim, dynamics[0].obs_dim
    st = _Stats(N, mz, m)
    total = 0.0
    for key, idx, Yb in groups:
        w = weights[idx]
        if not np.any(w > 0):
            continue
        seq = [dynamics[s - 1] for s in key]
        kf = kalman_filter(seq, Yb)
        sm = rts_smoother(seq, kf)
        total += float(w @ kf.loglik)
        W = w.sum()
        for t, s in enumerate(key):
            x = s - 1
            mt = sm.means[:, t]
            wm = w[:, None] * mt
            Ezz = W * sm.covs[t] + wm.T @ mt
            y = Yb[:, t]
            st.Szz[x] += Ezz
            st.Syz[x] += (w[:, None] * y).T @ mt
            st.Syy[x] += (w[:, None] * y * y).sum(0)
            st.n[x] += W
            if t == 0:
                st.Sinit[x] += Ezz
                st.ninit[x] += W
            else:
                mp = sm.means[:, t - 1]
                st.S00[x] += W * sm.covs[t - 1] + (w[:, None] * mp).T @ mp
                st.S10[x] += W * sm.cross_covs[t - 1] + wm.T @ mp
                st.S11[x] += Ezz
                st.nA[x] += W
    return st, total


def _solve_ridge(S, rhs, ridge, flags, what):
    """rhs @ inv(S) with a ridge when S is (near) singular."""
    mz = S.shape[0]
    w = np.linalg.eigvalsh(symmetrize(S))
    if w[0] <= 0 or w[-1] / w[0] > 1e12:
        S = S + max(ridge * np.trace(S) / mz, 1e-300) * np.eye(mz)
        flags.append(f"singular moment matrix for {what}; ridge applied")
    return np.linalg.solve(S.T, rhs.T).T


def _mstep(dynamics, st, occupancy_floor, ridge, flags):
    out = []
    var_floor = 1e-8
    for x, old in enumerate(dynamics):
        if st.n[x] < occupancy_floor:
            out.append(old)
            continue
        mz = old.latent_dim
        C = _solve_ridge(st.Szz[x], st.Syz[x], ridge, flags, f"C of state {x + 1}")
        D_var = (st.Syy[x] - np.einsum("ij,ij->i", C, st.Syz[x])) / st.n[x]
        D_var = np.maximum(D_var, var_floor * max(st.Syy[x].mean() / st.n[x], 1e-12))
        A, B_var = old.A, old.B_var
        if st.nA[x] >= mz + 1:
            A = _solve_ridge(st.S00[x], st.S10[x], ridge, flags, f"A of state {x + 1}")
            B_var = np.diag(st.S11[x] - A @ st.S10[x].T) / st.nA[x]
            B_var = np.maximum(B_var, var_floor)
            rho = np.max(np.abs(np.linalg.eigvals(A)))
            if rho >= 1.0:
                A = A * (0.999 / rho)
                flags.append(f"A of state {x + 1} rescaled to stay stable")
        Sigma0 = old.Sigma0
        if st.ninit[x] > 0:
            Sigma0 = symmetrize(st.Sinit[x] / st.ninit[x]) + var_floor * np.eye(mz)
        out.append(StateDynamics(A, B_var, C, D_var, Sigma0))
    return out


def initial_dynamics(episodes, N: int, latent_dim: int, weights=None) -> list[StateDynamics]:
    """Deterministic start: per-state PCA emissions, A = 0.5 I, Sigma0 = I."""
    M = np.asarray(episodes[0][0]).shape[1]
    if latent_dim > M:
        raise ConfigurationError(f"latent_dim {latent_dim} exceeds observation dimension {M}")
    w = np.ones(len(episodes)) if weights is None else np.asarray(weights, float)
    sums = np.zeros((N, M, M))
    n = np.zeros(N)
    for (Y, labels), wk in zip(episodes, w):
        Y = np.asarray(Y, float)
        labels = np.asarray(labels)
        for s in np.unique(labels):
            rows = Y[labels == s]
            sums[s - 1] += wk * rows.T @ rows
            n[s - 1] += wk * len(rows)
    pooled = sums.sum(0) / max(n.sum(), 1e-12)
    out = []
    for x in range(N):
        S = sums[x] / n[x] if n[x] > 0 else pooled
        vals, vecs = np.linalg.eigh(symmetrize(S))
        vals, vecs = vals[::-1][:latent_dim], vecs[:, ::-1][:, :latent_dim]
        sign = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(latent_dim)])
        C = vecs * sign * np.sqrt(np.clip(vals, 1e-12, None))
        floor = 1e-3 * max(np.trace(S) / M, 1e-12)
        D_var = np.maximum(np.diag(S) - np.sum(C * C, axis=1), floor)
        out.append(StateDynamics(0.5 * np.eye(latent_dim), np.full(latent_dim, 0.75), C,
                                 D_var, np.eye(latent_dim)))
    return out


def _run_em(dynamics, groups, weights, N, cfg, occupancy_floor, flags):
    trace = []
    converged = False
    for it in range(cfg.max_iters):
        st, ll = _estep(dynamics, groups, weights, N)
        if trace and ll < trace[-1] - 1e-8 * max(1.0, abs(trace[-1])):
            flags.append(f"loglik decreased at iteration {it}: {trace[-1]:.10g} -> {ll:.10g}")
        trace.append(ll)
        if len(trace) > 1 and trace[-1] - trace[-2] < cfg.tol * abs(trace[-2]):
            converged = True
            break
        dynamics = _mstep(dynamics, st, occupancy_floor, cfg.ridge, flags)
    return dynamics, trace, converged


def em_fit_dynamics(episodes, N: int, config: EMConfig | None = None, weights=None,
                    init: list[StateDynamics] | None = None) -> EMResult:
    """Fit per-state dynamics to ``(Y, step_labels)`` episodes by EM.

    States with fewer than ``min_occupancy`` labeled steps keep their
    initial parameters and are listed in ``excluded_states``.
    """
    cfg = config or EMConfig()
    episodes = [(np.asarray(Y, float), np.asarray(lab, int)) for Y, lab in episodes]
    if not episodes:
        raise ValueError("no episodes to fit")
    K = len(episodes)
    w = np.ones(K) if weights is None else np.asarray(weights, float)
    M = episodes[0][0].shape[1]
    mz = cfg.latent_dim or M
    if init is None:
        init = initial_dynamics(episodes, N, mz, w)
    mz = init[0].latent_dim
    floor = cfg.occupancy_floor(mz)
    occupancy = np.zeros(N)
    for (Y, lab), wk in zip(episodes, w):
        np.add.at(occupancy, lab - 1, wk)
    excluded = [s + 1 for s in range(N) if occupancy[s] < floor]
    flags = []
    for s in excluded:
        msg = f"state {s} has occupancy {occupancy[s - 1]:.4g} < {floor}; parameters not fitted"
        flags.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if cfg.max_iters == 0:
        return EMResult(list(init), [], excluded, flags)

    groups = _group(episodes, w)
    dyn, trace, conv = _run_em(list(init), groups, w, N, cfg, floor, flags)
    if cfg.restarts:
        rng = np.random.default_rng(cfg.seed)
        for _ in range(cfg.restarts):
            start = [StateDynamics(d.A, d.B_var, d.C * (1 + 0.3 * rng.standard_normal(d.C.shape)),
                                   d.D_var, d.Sigma0) for d in init]
            f2 = []
            d2, t2, c2 = _run_em(start, groups, w, N, cfg, floor, f2)
            if t2 and t2[-1] > trace[-1]:
                dyn, trace, conv, flags = d2, t2, c2, flags + f2
    return EMResult(dyn, trace, excluded, flags, conv)


# --- components and mixture ----------------------------------------------------

@dataclass
class ComponentFit:
    params: SslgmParams
    em: EMResult
    flags: list[str]


def fit_component(episodes: list[FitEpisode], N: int, config: FitConfig, weights=None,
                  init: list[StateDynamics] | None = None) -> ComponentFit:
    seqs = [e.seq for e in episodes]
    p0, P, f1 = estimate_transitions([s.states for s in seqs], N, weights, config.beta)
    r, q, f2 = estimate_durations(seqs, N, weights)
    em = em_fit_dynamics([(e.Y, e.step_labels) for e in episodes], N, config.em, weights, init)
    params = SslgmParams(em.dynamics, ChainParams(p0, P, r, q))
    return ComponentFit(params, em, f1 + f2 + em.flags)


def component_logliks(params: SslgmParams, episodes: list[FitEpisode], groups=None) -> np.ndarray:
    """log p(Y, S, T | component) per episode under hard labels."""
    if groups is None:
        groups = _group([(e.Y, e.step_labels) for e in episodes], None)
    ll = episode_logliks(params.dynamics, groups, len(episodes))
    with np.errstate(divide="ignore"):
        ll += np.array([sequence_loglik(params.chain, e.seq) for e in episodes])
    return ll


def _init_responsibilities(episodes, G, seed):
    feats = []
    for e in episodes:
        feats.append(np.concatenate([e.q, np.log(np.mean(e.Y ** 2, axis=0) + 1e-12)]))
    X = np.asarray(feats)
    sd = X.std(0)
    X = (X[:, sd > 0] - X[:, sd > 0].mean(0)) / sd[sd > 0]
    if X.shape[1] == 0:
        X = np.arange(len(episodes), dtype=float)[:, None]
    rng = np.random.default_rng(seed)
    _, lab = kmeans2(X, G, minit="++", seed=rng)
    R = np.full((len(episodes), G), 1e-3)
    R[np.arange(len(episodes)), lab] = 1.0
    return R / R.sum(1, keepdims=True)


@dataclass
class MixtureFit:
    model: MixtureModel
    loglik_trace: list[float]
    responsibilities: np.ndarray
    component_fits: list[ComponentFit]
    flags: list[str]


def fit_mixture(episodes: list[FitEpisode], N: int, G: int, config: FitConfig | None = None) -> MixtureFit:
    """Outer EM over components with covariate-dependent softmax weights."""
    cfg = config or FitConfig(N=N, G=G)
    K = len(episodes)
    if K == 0:
        raise ValueError("no episodes to fit")
    qd = len(episodes[0].q)
    Q = np.asarray([e.q for e in episodes]).reshape(K, qd)
    if G == 1:
        cf = fit_component(episodes, N, cfg)
        model = MixtureModel([cf.params], np.zeros((1, qd + 1)))
        return MixtureFit(model, cf.em.loglik_trace, np.ones((K, 1)), [cf], list(cf.flags))

    groups = _group([(e.Y, e.step_labels) for e in episodes], None)
    R = _init_responsibilities(episodes, G, cfg.em.seed)
    flags: list[str] = []
    fits: list[ComponentFit | None] = [None] * G
    coeffs = np.zeros((G, qd + 1))
    trace: list[float] = []
    for it in range(cfg.mixture_iters):
        alive = [g for g in range(G) if R[:, g].max() >= 1e-3]
        if len(alive) < G:
            for g in sorted(set(range(G)) - set(alive)):
                msg = f"component {g} has no support; pruned"
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                flags.append(msg)
            R = R[:, alive]
            R /= R.sum(1, keepdims=True)
            fits = [fits[g] for g in alive]
            G = len(alive)
        for g in range(G):
            init = fits[g].params.dynamics if fits[g] is not None else None
            fits[g] = fit_component(episodes, N, cfg, R[:, g], init)
        coeffs = fit_softmax_regression(Q, R, cfg.weight_l2)
        model = MixtureModel([f.params for f in fits], coeffs)
        logw = model.log_weights(Q)
        L = np.column_stack([component_logliks(f.params, episodes, groups) for f in fits]) + logw
        total = float(logsumexp(L, axis=1).sum())
        R = np.exp(L - logsumexp(L, axis=1, keepdims=True))
        trace.append(total)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < cfg.mixture_tol * abs(trace[-2]):
            break
    for f in fits:
        flags.extend(f.flags)
    return MixtureFit(MixtureModel([f.params for f in fits], coeffs), trace, R, fits, flags)


# --- full pipeline ---------------------------------------------------------------

def segment_episode(Y, N: int, config: SegmentationConfig, episode=None) -> Segmentation:
    """Final step is the absorbing state; the transient prefix is segmented."""
    Y = np.asarray(Y, float)
    J = len(Y)
    if J == 1:
        return Segmentation((0, 1), episode)
    prefix = segment_series(Y[:-1], config, max_transient_segments(N), episode)
    return Segmentation(prefix.boundaries + (J,), episode)


@dataclass
class FitResult:
    model: MixtureModel
    diagnostics: dict
    labeled: list[LabeledEpisode]
    mixture: MixtureFit


def backward_labeling_em(records, config: FitConfig | None = None) -> FitResult:
    """Segment, label and fit a mixture SSLGM to outcome-labeled episodes."""
    cfg = config or FitConfig()
    records = list(records)
    if not records:
        raise LearningError("empty dataset")
    N = cfg.N
    segs = [segment_episode(r.Y, N, cfg.segmentation, r.id) for r in records]
    labeled = label_episodes([(r.id, r.Y, s, r.F) for r, s in zip(records, segs)], N,
                             cfg.segmentation.zeta)
    failed = [lab.episode for lab in labeled if lab.relabel_failed]
    diag = {
        "n_episodes": len(records),
        "segment_count_hist": {str(k): v for k, v in sorted(Counter(len(s) for s in segs).items())},
        "relabel_failed": len(failed),
        "relabel_failed_rate": len(failed) / len(records),
    }
    if diag["relabel_failed_rate"] > cfg.max_relabel_failed:
        raise LearningError(f"{len(failed)} of {len(records)} episodes could not be labeled", diag)

    episodes = [FitEpisode(r.id, r.Y, r.q, SuperStateSeq(lab.labels, lab.durations))
                for r, lab in zip(records, labeled) if not lab.relabel_failed]
    occupancy = np.zeros(N)
    for e in episodes:
        np.add.at(occupancy, e.step_labels - 1, 1)
    diag["occupancy"] = {str(s + 1): int(occupancy[s]) for s in range(N)}

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        mix = fit_mixture(episodes, N, cfg.G, cfg)
    diag["loglik_trace"] = [float(x) for x in mix.loglik_trace]
    diag["em_loglik_traces"] = [[float(x) for x in f.em.loglik_trace] for f in mix.component_fits]
    diag["excluded_states"] = [f.em.excluded_states for f in mix.component_fits]
    diag["flags"] = sorted(set(mix.flags))
    diag["warnings"] = sorted({str(w.message) for w in caught})
    for msg in diag["warnings"]:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    mix.model.meta = {"fit_config": cfg.to_dict()}
    return FitResult(mix.model, diag, labeled, mix)
