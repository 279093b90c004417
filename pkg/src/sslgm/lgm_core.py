"""Linear-Gaussian state-space machinery.

Filtering and smoothing accept either one observation matrix ``(T, M)`` or a
batch ``(B, T, M)`` of episodes that share the same per-step dynamics. The
covariance recursions do not depend on the data, so a batch costs little more
than a single episode; learning relies on this to process all episodes with
the same label sequence at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, DataError

LOG_2PI = np.log(2.0 * np.pi)
COND_LIMIT = 1e12
JITTER_SCALE = 1e-9


@dataclass(eq=False)
class StateDynamics:
    """Per-state dynamics and emission parameters.

    ``B_var`` and ``D_var`` hold the diagonals of the process and observation
    noise covariances. ``Sigma0`` is the latent covariance at the first step of
    an episode.
    """

    A: np.ndarray
    B_var: np.ndarray
    C: np.ndarray
    D_var: np.ndarray
    Sigma0: np.ndarray

    def __post_init__(self):
        # C-ordered copies keep BLAS results identical for fitted and reloaded models
        self.A = np.ascontiguousarray(np.atleast_2d(np.asarray(self.A, dtype=float)))
        self.B_var = np.ascontiguousarray(np.atleast_1d(np.asarray(self.B_var, dtype=float)))
        self.C = np.ascontiguousarray(np.atleast_2d(np.asarray(self.C, dtype=float)))
        self.D_var = np.ascontiguousarray(np.atleast_1d(np.asarray(self.D_var, dtype=float)))
        self.Sigma0 = np.ascontiguousarray(np.atleast_2d(np.asarray(self.Sigma0, dtype=float)))
        mz = self.A.shape[0]
        m = self.C.shape[0]
        if self.A.shape != (mz, mz):
            raise ConfigurationError(f"A must be square, got {self.A.shape}")
        if self.B_var.shape != (mz,):
            raise ConfigurationError(f"B_var must have length {mz}, got {self.B_var.shape}")
        if self.C.shape != (m, mz):
            raise ConfigurationError(f"C must be {m}x{mz}, got {self.C.shape}")
        if self.D_var.shape != (m,):
            raise ConfigurationError(f"D_var must have length {m}, got {self.D_var.shape}")
        if self.Sigma0.shape != (mz, mz):
            raise ConfigurationError(f"Sigma0 must be {mz}x{mz}, got {self.Sigma0.shape}")

    @property
    def latent_dim(self) -> int:
        return self.A.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.C.shape[0]

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def check(self, tol: float = 1e-9) -> None:
        """Raise ConfigurationError unless the stability/PSD invariants hold."""
        if not self.spectral_radius() < 1.0:
            raise ConfigurationError(f"A is not stable (spectral radius {self.spectral_radius():.6g})")
        if np.any(self.B_var < 0) or np.any(self.D_var < 0):
            raise ConfigurationError("noise variances must be nonnegative")
        if not np.allclose(self.Sigma0, self.Sigma0.T, atol=tol):
            raise ConfigurationError("Sigma0 is not symmetric")
        if np.linalg.eigvalsh(self.Sigma0).min() < -tol:
            raise ConfigurationError("Sigma0 is not positive semidefinite")

    def copy(self) -> "StateDynamics":
        return StateDynamics(self.A.copy(), self.B_var.copy(), self.C.copy(),
                             self.D_var.copy(), self.Sigma0.copy())


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class FilterResult:
    """Output of :func:`kalman_filter`.

    ``means``/``pred_means`` have shape ``(T, Mz)`` or ``(B, T, Mz)``;
    covariances are shared by the batch and have shape ``(T, Mz, Mz)``.
    ``loglik`` is a float, or an array of length ``B`` for batched input.
    """

    means: np.ndarray
    covs: np.ndarray
    pred_means: np.ndarray
    pred_covs: np.ndarray
    loglik: float | np.ndarray
    dynamics: list = field(repr=False)

    def beliefs(self, episode: int | None = None) -> list[GaussianBelief]:
        means = self.means if self.means.ndim == 2 else self.means[episode or 0]
        return [GaussianBelief(means[t], self.covs[t]) for t in range(len(self.covs))]


@dataclass
class SmoothResult:
    """Output of :func:`rts_smoother`.

    ``cross_covs[t]`` is Cov(Z_{t+1}, Z_t | Y) for t = 0..T-2 (0-based).
    """

    means: np.ndarray
    covs: np.ndarray
    cross_covs: np.ndarray

    def beliefs(self, episode: int | None = None) -> list[GaussianBelief]:
        means = self.means if self.means.ndim == 2 else self.means[episode or 0]
        return [GaussianBelief(means[t], self.covs[t]) for t in range(len(self.covs))]


def as_dynamics_sequence(dynamics, T: int) -> list[StateDynamics]:
    """Broadcast a single StateDynamics to length T, or validate a sequence."""
    if isinstance(dynamics, StateDynamics):
        return [dynamics] * T
    seq = list(dynamics)
    if len(seq) != T:
        raise ConfigurationError(f"dynamics sequence has length {len(seq)}, expected {T}")
    mz, m = seq[0].latent_dim, seq[0].obs_dim
    for d in seq:
        if d.latent_dim != mz or d.obs_dim != m:
            raise ConfigurationError("inconsistent dimensions within dynamics sequence")
    return seq


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def regularize_innovation(S: np.ndarray) -> np.ndarray:
    """Add jitter to an ill-conditioned innovation covariance."""
    w = np.linalg.eigvalsh(S)
    if w[0] <= 0 or w[-1] / w[0] > COND_LIMIT:
        lam = JITTER_SCALE * np.trace(S) / S.shape[0]
        if lam <= 0:
            lam = np.finfo(float).tiny
        S = S + lam * np.eye(S.shape[0])
    return S


def _check_finite(Y: np.ndarray) -> None:
    bad = ~np.isfinite(Y)
    if bad.any():
        b, t, m = np.argwhere(bad)[0]
        where = f"t={t + 1}, channel={m + 1}"
        if Y.shape[0] > 1:
            where = f"episode={b}, " + where
        raise DataError(f"non-finite observation at {where}")


def kalman_filter(dynamics: StateDynamics | Sequence[StateDynamics], Y) -> FilterResult:
    """Kalman filter for a time-varying linear-Gaussian model.

    The latent prior at the first step is N(0, Sigma0) of the first entry of
    ``dynamics``; subsequent steps use ``Z_t = A Z_{t-1} + noise``.
    """
    Y = np.asarray(Y, dtype=float)
    batched = Y.ndim == 3
    if not batched:
        Y = Y[None]
    if Y.ndim != 3 or Y.shape[1] < 1:
        raise ConfigurationError(f"observations must be (T, M) or (B, T, M), got {Y.shape}")
    nb, T, M = Y.shape
    seq = as_dynamics_sequence(dynamics, T)
    if seq[0].obs_dim != M:
        raise ConfigurationError(f"observations have {M} channels, model expects {seq[0].obs_dim}")
    _check_finite(Y)
    mz = seq[0].latent_dim
    eye = np.eye(mz)

    means = np.empty((nb, T, mz))
    pred_means = np.empty((nb, T, mz))
    covs = np.empty((T, mz, mz))
    pred_covs = np.empty((T, mz, mz))
    loglik = np.zeros(nb)

    m = np.zeros((nb, mz))
    P = None
    for t, d in enumerate(seq):
        if t == 0:
            P = symmetrize(d.Sigma0)
        else:
            m = m @ d.A.T
            P = symmetrize(d.A @ P @ d.A.T + np.diag(d.B_var))
        pred_means[:, t] = m
        pred_covs[t] = P

        R = np.diag(d.D_var)
        S = regularize_innovation(symmetrize(d.C @ P @ d.C.T + R))
        cho = linalg.cho_factor(S, lower=True)
        K = linalg.cho_solve(cho, d.C @ P).T
        v = Y[:, t] - m @ d.C.T
        logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
        maha = np.einsum("bi,bi->b", v, linalg.cho_solve(cho, v.T).T)
        loglik += -0.5 * (M * LOG_2PI + logdet + maha)

        m = m + v @ K.T
        IKC = eye - K @ d.C
        P = symmetrize(IKC @ P @ IKC.T + K @ R @ K.T)
        means[:, t] = m
        covs[t] = P

    if not batched:
        return FilterResult(means[0], covs, pred_means[0], pred_covs, float(loglik[0]), seq)
    return FilterResult(means, covs, pred_means, pred_covs, loglik, seq)


def _smoother_gain(P_f: np.ndarray, A: np.ndarray, P_pred: np.ndarray) -> np.ndarray:
    # gain = P_f A^T P_pred^{-1}
    rhs = A @ P_f
    w = np.linalg.eigvalsh(P_pred)
    if w[0] > 0 and w[-1] / w[0] < COND_LIMIT:
        return np.linalg.solve(P_pred, rhs).T
    return (np.linalg.pinv(P_pred, hermitian=True) @ rhs).T


def rts_smoother(dynamics, filtered: FilterResult) -> SmoothResult:
    """Rauch-Tung-Striebel fixed-interval smoother."""
    T = filtered.covs.shape[0]
    seq = as_dynamics_sequence(dynamics, T) if dynamics is not None else filtered.dynamics
    if len(seq) != T:
        raise ValueError("dynamics and filter output have different lengths")
    batched = filtered.means.ndim == 3
    m_f = filtered.means if batched else filtered.means[None]
    m_p = filtered.pred_means if batched else filtered.pred_means[None]

    ms = m_f.copy()
    Ps = filtered.covs.copy()
    mz = Ps.shape[-1]
    cross = np.empty((max(T - 1, 0), mz, mz))
    for t in range(T - 2, -1, -1):
        P_pred = filtered.pred_covs[t + 1]
        J = _smoother_gain(filtered.covs[t], seq[t + 1].A, P_pred)
        ms[:, t] = m_f[:, t] + (ms[:, t + 1] - m_p[:, t + 1]) @ J.T
        Ps[t] = symmetrize(filtered.covs[t] + J @ (Ps[t + 1] - P_pred) @ J.T)
        cross[t] = Ps[t + 1] @ J.T
    if not batched:
        ms = ms[0]
    return SmoothResult(ms, Ps, cross)


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(symmetrize(S))
    return V * np.sqrt(np.clip(w, 0.0, None))


def sample_path(dynamics, T: int, rng_seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw (Z, Y) of length T; ``rng_seed`` may be an int or a Generator."""
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    seq = as_dynamics_sequence(dynamics, T)
    rng = np.random.default_rng(rng_seed)
    mz, m = seq[0].latent_dim, seq[0].obs_dim
    Z = np.empty((T, mz))
    Y = np.empty((T, m))
    z = _psd_sqrt(seq[0].Sigma0) @ rng.standard_normal(mz)
    for t, d in enumerate(seq):
        if t > 0:
            z = d.A @ z + np.sqrt(d.B_var) * rng.standard_normal(mz)
        Z[t] = z
        Y[t] = d.C @ z + np.sqrt(d.D_var) * rng.standard_normal(m)
    return Z, Y


def stationary_cov(A: np.ndarray, B_var: np.ndarray) -> np.ndarray:
    """Stationary latent covariance of ``Z_t = A Z_{t-1} + e``, e ~ N(0, diag(B_var))."""
    return linalg.solve_discrete_lyapunov(np.asarray(A, float), np.diag(B_var))


def gaussian_loglik(v: np.ndarray, S: np.ndarray) -> float:
    """log N(v; 0, S) with the innovation jitter rule applied."""
    S = regularize_innovation(symmetrize(S))
    cho = linalg.cho_factor(S, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
    return float(-0.5 * (len(v) * LOG_2PI + logdet + v @ linalg.cho_solve(cho, v)))
