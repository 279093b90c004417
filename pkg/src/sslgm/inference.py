"""Online risk scoring and retrospective state estimation.

Each mixture component runs a switching Kalman filter (one Gaussian belief
per clinical state, merged IMM-style before each prediction) together with an
explicit-duration forward recursion over (state, elapsed dwell). The risk
score is the posterior probability of eventual absorption in the
deterioration state:

    R(t) = sum_g P(g | Y_1..t) sum_i P(S_t = i | Y_1..t, g) h_g(i)

where ``h_g`` solves the gambler's-ruin absorption equations.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import ConfigurationError, DataError
from .lgm_core import LOG_2PI, regularize_innovation, rts_smoother, kalman_filter, symmetrize
from .model import MixtureModel, SslgmParams
from .semi_markov import absorption_probs, nb_hazard

D_MAX = 200
MODES = ("imm", "gpb2")
RULES = ("soft", "hard")


def _kalman_step(m, P, d, y):
    """Predicted (m, P) -> (log N(y), filtered m, filtered P) for one state."""
    S = regularize_innovation(symmetrize(d.C @ P @ d.C.T + np.diag(d.D_var)))
    cho = linalg.cho_factor(S, lower=True)
    v = y - d.C @ m
    K = linalg.cho_solve(cho, d.C @ P).T
    ll = -0.5 * (len(y) * LOG_2PI + 2.0 * np.sum(np.log(np.diag(cho[0])))
                 + v @ linalg.cho_solve(cho, v))
    IKC = np.eye(len(m)) - K @ d.C
    Pf = symmetrize(IKC @ P @ IKC.T + K @ np.diag(d.D_var) @ K.T)
    return float(ll), m + K @ v, Pf


def _predict(m, P, d):
    return d.A @ m, symmetrize(d.A @ P @ d.A.T + np.diag(d.B_var))


def _merge(weights, means, covs):
    w = weights / weights.sum()
    m = w @ means
    dm = means - m
    P = np.einsum("i,ijk->jk", w, covs) + np.einsum("i,ij,ik->jk", w, dm, dm)
    return m, symmetrize(P)


class ComponentFilter:
    """Forward filter for one SSLGM component."""

    def __init__(self, params: SslgmParams, d_max: int = D_MAX, mode: str = "imm", rule: str = "soft"):
        if mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if rule not in RULES:
            raise ConfigurationError(f"rule must be one of {RULES}")
        self.params = params
        self.mode = mode
        self.rule = rule
        self.d_max = d_max
        N = params.N
        self.N = N
        self.h = absorption_probs(params.chain)
        self.absorbing = np.zeros(N, dtype=bool)
        self.absorbing[[0, N - 1]] = True
        self.haz = np.zeros((N, d_max))
        for i in params.chain.transient:
            self.haz[i] = nb_hazard(d_max, params.chain.r[i], params.chain.q[i])
        mz = params.latent_dim
        self.means = np.zeros((N, mz))
        self.covs = np.stack([d.Sigma0 for d in params.dynamics])
        self.alpha = None
        self.t = 0

    @property
    def state_posterior(self) -> np.ndarray:
        if self.alpha is None:
            return self.params.chain.p0.copy()
        return self.alpha.sum(axis=1)

    @property
    def risk(self) -> float:
        p = self.state_posterior
        if self.rule == "hard":
            # absorption probability of the single most probable state
            return float(self.h[np.argmax(p)])
        return float(p @ self.h)

    def _propagate(self):
        """Chain prediction: (alpha_pred, stay mass, entry mass by source)."""
        a, haz, N = self.alpha, self.haz, self.N
        P = self.params.chain.P
        stay = a * (1.0 - haz)
        pred = np.zeros_like(a)
        pred[:, 1:] = stay[:, :-1]
        pred[:, -1] += stay[:, -1]
        pred[self.absorbing] = 0.0
        pred[self.absorbing, 0] = a[self.absorbing, 0]
        leave = (a * haz).sum(axis=1)
        entry = leave[:, None] * P * (~np.eye(N, dtype=bool))
        pred[:, 0] += entry.sum(axis=0)
        stay_mass = np.where(self.absorbing, a[:, 0], stay.sum(axis=1))
        return pred, stay_mass, entry

    def step(self, y: np.ndarray) -> tuple[float, np.ndarray]:
        """Absorb one observation; returns (log predictive density, emission weights).

        The emission weights ``E`` (N x d_max) satisfy
        ``alpha_t ∝ alpha_pred * E`` and are kept for smoothing.
        """
        N = self.N
        dyn = self.params.dynamics
        if self.alpha is None:
            pred = np.zeros((N, self.d_max))
            pred[:, 0] = self.params.chain.p0
            logE = np.zeros((N, self.d_max))
            for j in range(N):
                ll, self.means[j], self.covs[j] = _kalman_step(self.means[j], self.covs[j], dyn[j], y)
                logE[j] = ll
        else:
            pred, stay_mass, entry = self._propagate()
            joint = np.diag(stay_mass) + entry
            if self.mode == "imm":
                logE = self._imm(joint, y)
            else:
                logE = self._gpb2(joint, stay_mass, entry, y)
        shift = np.max(np.where(pred > 0, logE, -np.inf))
        if not np.isfinite(shift):
            shift = float(np.max(logE))
        E = np.exp(logE - shift)
        a = pred * E
        c = a.sum()
        self.alpha = a / c
        self.t += 1
        return float(np.log(c) + shift), E

    def _imm(self, joint, y):
        N, dyn = self.N, self.params.dynamics
        logE = np.zeros((N, self.d_max))
        means, covs = self.means.copy(), self.covs.copy()
        for j in range(N):
            w = joint[:, j]
            if w.sum() > 0:
                m0, P0 = _merge(w, means, covs)
            else:
                m0, P0 = means[j], covs[j]
            m, P = _predict(m0, P0, dyn[j])
            ll, self.means[j], self.covs[j] = _kalman_step(m, P, dyn[j], y)
            logE[j] = ll
        return logE

    def _gpb2(self, joint, stay_mass, entry, y):
        N, dyn = self.N, self.params.dynamics
        mz = self.means.shape[1]
        L = np.full((N, N), -np.inf)
        pm = np.zeros((N, N, mz))
        pc = np.zeros((N, N, mz, mz))
        for i in range(N):
            for j in range(N):
                if joint[i, j] > 0:
                    m, P = _predict(self.means[i], self.covs[i], dyn[j])
                    L[i, j], pm[i, j], pc[i, j] = _kalman_step(m, P, dyn[j], y)
        logE = np.zeros((N, self.d_max))
        for j in range(N):
            src = joint[:, j] > 0
            if not src.any():
                m, P = _predict(self.means[j], self.covs[j], dyn[j])
                logE[j], self.means[j], self.covs[j] = _kalman_step(m, P, dyn[j], y)
                continue
            with np.errstate(divide="ignore"):
                lw = np.log(joint[:, j]) + L[:, j]
            wpost = np.exp(lw - logsumexp(lw[src]))
            wpost[~src] = 0.0
            self.means[j], self.covs[j] = _merge(wpost, pm[:, j], pc[:, j])
            if self.absorbing[j]:
                logE[j] = logsumexp(lw[src]) - np.log(joint[src, j].sum())
                continue
            logE[j, 1:] = L[j, j] if joint[j, j] > 0 else 0.0
            e = entry[:, j]
            if e.sum() > 0:
                with np.errstate(divide="ignore"):
                    le = np.log(e) + L[:, j]
                logE[j, 0] = logsumexp(le[e > 0]) - np.log(e.sum())
        return logE


@dataclass
class RiskTrajectory:
    """Per-step risk. Row 0 is the admission prior, row t follows Y_t."""

    R: np.ndarray
    argmax_state: np.ndarray
    state_posterior: np.ndarray
    component_posterior: np.ndarray

    def __len__(self):
        return len(self.R)

    def to_csv(self) -> str:
        N = self.state_posterior.shape[1]
        G = self.component_posterior.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "R", "argmax_state"] + [f"p_state_{i + 1}" for i in range(N)]
                   + [f"p_component_{g + 1}" for g in range(G)])
        for t in range(len(self.R)):
            w.writerow([t, repr(float(self.R[t])), int(self.argmax_state[t])]
                       + [repr(float(x)) for x in self.state_posterior[t]]
                       + [repr(float(x)) for x in self.component_posterior[t]])
        return buf.getvalue()


class ScoringSession:
    """Sequential risk scoring for one patient."""

    def __init__(self, model: MixtureModel, q, d_max: int = D_MAX, mode: str = "imm", rule: str = "soft"):
        self.model = model
        self.log_comp = model.log_weights(q)
        self.filters = [ComponentFilter(c, d_max, mode, rule) for c in model.components]
        self.loglik = 0.0
        self.history: list[float] = []
        self._rows = []
        self._record()

    @property
    def component_posterior(self) -> np.ndarray:
        return np.exp(self.log_comp - logsumexp(self.log_comp))

    @property
    def state_posterior(self) -> np.ndarray:
        """State posterior mixed over components."""
        w = self.component_posterior
        return sum(wg * f.state_posterior for wg, f in zip(w, self.filters))

    @property
    def risk(self) -> float:
        w = self.component_posterior
        return float(min(max(sum(wg * f.risk for wg, f in zip(w, self.filters)), 0.0), 1.0))

    def _record(self):
        R = self.risk
        self.history.append(R)
        self._rows.append((R, self.state_posterior, self.component_posterior))

    def update(self, y) -> float:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.model.obs_dim,):
            raise ConfigurationError(f"observation must have shape ({self.model.obs_dim},), got {y.shape}")
        if not np.all(np.isfinite(y)):
            raise DataError(f"non-finite observation in channel(s) {np.flatnonzero(~np.isfinite(y)).tolist()}")
        logc = np.array([f.step(y)[0] for f in self.filters])
        self.log_comp = self.log_comp + logc
        step_ll = logsumexp(self.log_comp)
        self.loglik += float(step_ll)
        self.log_comp -= step_ll
        self._record()
        return self.history[-1]

    def trajectory(self) -> RiskTrajectory:
        R = np.array([r[0] for r in self._rows])
        post = np.array([r[1] for r in self._rows])
        comp = np.array([r[2] for r in self._rows])
        return RiskTrajectory(R, post.argmax(axis=1) + 1, post, comp)


def session_start(model: MixtureModel, q, d_max: int = D_MAX, mode: str = "imm",
                  rule: str = "soft") -> ScoringSession:
    return ScoringSession(model, q, d_max, mode, rule)


def session_update(session: ScoringSession, y) -> tuple[float, ScoringSession]:
    return session.update(y), session


def score_episode(model: MixtureModel, record, d_max: int = D_MAX, mode: str = "imm",
                  rule: str = "soft") -> RiskTrajectory:
    """Fold the online update over a whole episode."""
    return score_session(model, record, d_max, mode, rule).trajectory()


def score_session(model: MixtureModel, record, d_max: int = D_MAX, mode: str = "imm",
                  rule: str = "soft") -> ScoringSession:
    """Session after every observation of ``record`` has been absorbed."""
    if record.Y.shape[1] != model.obs_dim:
        raise ConfigurationError(f"record {record.id} has {record.Y.shape[1]} channels, "
                                 f"model expects {model.obs_dim}")
    s = ScoringSession(model, record.q, d_max, mode, rule)
    for y in record.Y:
        s.update(y)
    return s


def episode_loglik(model: MixtureModel, record, d_max: int = D_MAX, mode: str = "imm") -> float:
    """log p(Y | q) accumulated from one-step predictive densities."""
    return score_session(model, record, d_max, mode).loglik


@dataclass
class SmoothedStates:
    states: np.ndarray
    posterior: np.ndarray
    filtered: np.ndarray
    latent_means: np.ndarray


def _backward(f: ComponentFilter, Es):
    """Smoothed (state, dwell) posteriors from stored forward quantities."""
    N, dmax = f.N, f.d_max
    P = f.params.chain.P
    offdiag = P * (~np.eye(N, dtype=bool))
    T = len(Es)
    beta = np.ones((N, dmax))
    betas = [beta]
    for t in range(T - 2, -1, -1):
        Gn = Es[t + 1] * beta
        enter = offdiag @ Gn[:, 0]
        nxt = np.concatenate([Gn[:, 1:], Gn[:, -1:]], axis=1)
        b = (1.0 - f.haz) * nxt + f.haz * enter[:, None]
        b[f.absorbing] = 0.0
        b[f.absorbing, 0] = Gn[f.absorbing, 0]
        beta = b / b.max()
        betas.append(beta)
    return betas[::-1]


def smooth_states(model: MixtureModel, q, Y, d_max: int = D_MAX, mode: str = "imm") -> SmoothedStates:
    """Forward-backward state posterior for a complete episode."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] != model.obs_dim:
        raise ConfigurationError("Y must be (T, M) with the model's M")
    T, N = len(Y), model.N
    log_comp = model.log_weights(q)
    smoothed = np.zeros((T, N))
    filtered = np.zeros((T, N))
    per_comp = []
    for g, c in enumerate(model.components):
        f = ComponentFilter(c, d_max, mode)
        alphas, Es = [], []
        for y in Y:
            lc, E = f.step(y)
            log_comp[g] += lc
            alphas.append(f.alpha.copy())
            Es.append(E)
        betas = _backward(f, Es)
        gam = np.array([(a * b).sum(axis=1) / (a * b).sum() for a, b in zip(alphas, betas)])
        per_comp.append((gam, np.array([a.sum(axis=1) for a in alphas])))
    w = np.exp(log_comp - logsumexp(log_comp))
    for wg, (gam, filt) in zip(w, per_comp):
        smoothed += wg * gam
        filtered += wg * filt
    states = smoothed.argmax(axis=1) + 1
    best = model.components[int(np.argmax(w))]
    seq = best.dynamics_for(states)
    latent = rts_smoother(seq, kalman_filter(seq, Y)).means
    return SmoothedStates(states, smoothed, filtered, latent)
