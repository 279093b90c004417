"""Model containers and the ``sslgm-model/1`` JSON format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import log_softmax, softmax

from .errors import ConfigurationError, DataError
from .lgm_core import StateDynamics
from .semi_markov import ChainParams

MODEL_FORMAT = "sslgm-model/1"


@dataclass(eq=False)
class SslgmParams:
    """One SSLGM: per-state dynamics plus the super-state chain."""

    dynamics: list[StateDynamics]
    chain: ChainParams

    def __post_init__(self):
        if len(self.dynamics) != self.chain.N:
            raise ConfigurationError(
                f"{len(self.dynamics)} state dynamics for a chain with {self.chain.N} states")
        d0 = self.dynamics[0]
        for d in self.dynamics:
            if d.latent_dim != d0.latent_dim or d.obs_dim != d0.obs_dim:
                raise ConfigurationError("all states must share latent and observation dimensions")

    @property
    def N(self) -> int:
        return self.chain.N

    @property
    def obs_dim(self) -> int:
        return self.dynamics[0].obs_dim

    @property
    def latent_dim(self) -> int:
        return self.dynamics[0].latent_dim

    def dynamics_for(self, step_labels) -> list[StateDynamics]:
        return [self.dynamics[int(s) - 1] for s in step_labels]

    def check(self) -> None:
        self.chain.check()
        for d in self.dynamics:
            d.check()


@dataclass(eq=False)
class MixtureModel:
    """G SSLGM components with softmax-affine weights over covariates.

    ``weight_coeffs[g] = (intercept, coefficients...)``.
    """

    components: list[SslgmParams]
    weight_coeffs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weight_coeffs = np.atleast_2d(np.asarray(self.weight_coeffs, dtype=float))
        if self.weight_coeffs.shape[0] != len(self.components):
            raise ConfigurationError("one row of weight coefficients per component is required")
        c0 = self.components[0]
        for c in self.components:
            if c.N != c0.N or c.obs_dim != c0.obs_dim or c.latent_dim != c0.latent_dim:
                raise ConfigurationError("components must share N, M and latent dimension")

    @property
    def G(self) -> int:
        return len(self.components)

    @property
    def N(self) -> int:
        return self.components[0].N

    @property
    def obs_dim(self) -> int:
        return self.components[0].obs_dim

    @property
    def latent_dim(self) -> int:
        return self.components[0].latent_dim

    @property
    def q_dim(self) -> int:
        return self.weight_coeffs.shape[1] - 1

    def log_weights(self, q) -> np.ndarray:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if q.shape[-1] != self.q_dim:
            raise ConfigurationError(f"covariates have dimension {q.shape[-1]}, model expects {self.q_dim}")
        x = np.concatenate([np.ones(q.shape[:-1] + (1,)), q], axis=-1)
        return log_softmax(x @ self.weight_coeffs.T, axis=-1)

    def weights(self, q) -> np.ndarray:
        return np.exp(self.log_weights(q))


def design(Q) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None]
    return np.hstack([np.ones((len(Q), 1)), Q])


def fit_softmax_regression(Q, targets, l2: float = 1e-3, init=None) -> np.ndarray:
    """Multinomial logistic regression on soft targets.

    ``targets`` is K x G with rows summing to one (responsibilities). Returns
    a G x (dim(q) + 1) coefficient matrix; an L2 penalty fixes the softmax
    shift invariance.
    """
    X = design(Q)
    R = np.asarray(targets, dtype=float)
    K, G = R.shape
    if G == 1:
        return np.zeros((1, X.shape[1]))
    n = max(R.sum(), 1.0)

    def fun(w):
        W = w.reshape(G, -1)
        logits = X @ W.T
        lp = log_softmax(logits, axis=1)
        f = -np.sum(R * lp) / n + 0.5 * l2 * np.sum(W * W)
        p = softmax(logits, axis=1)
        grad = (p * R.sum(1, keepdims=True) - R).T @ X / n + l2 * W
        return f, grad.ravel()

    w0 = np.zeros(G * X.shape[1]) if init is None else np.asarray(init, float).ravel()
    res = optimize.minimize(fun, w0, jac=True, method="L-BFGS-B",
                            options={"maxiter": 1000, "gtol": 1e-10, "ftol": 1e-15})
    return res.x.reshape(G, -1)


# --- serialization -------------------------------------------------------

def _mat(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}


def _unmat(obj, where: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.asarray(obj["data"], dtype=float)
        return data.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed matrix at {where}: {exc}") from None


def model_to_dict(model: MixtureModel) -> dict:
    comps = []
    for c in model.components:
        durations = []
        for s in range(c.N):
            if s in (0, c.N - 1):
                durations.append(None)
            else:
                durations.append({"r": float(c.chain.r[s]), "q": float(c.chain.q[s])})
        comps.append({
            "p0": [float(x) for x in c.chain.p0],
            "P": _mat(c.chain.P),
            "durations": durations,
            "states": [{"A": _mat(d.A), "B_var": [float(x) for x in d.B_var], "C": _mat(d.C),
                        "D_var": [float(x) for x in d.D_var], "Sigma0": _mat(d.Sigma0)}
                       for d in c.dynamics],
        })
    return {
        "format": MODEL_FORMAT,
        "N": model.N,
        "G": model.G,
        "M": model.obs_dim,
        "latent_dim": model.latent_dim,
        "q_dim": model.q_dim,
        "weight_coeffs": _mat(model.weight_coeffs),
        "components": comps,
        "meta": model.meta,
    }


def model_from_dict(doc: dict) -> MixtureModel:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise DataError(f"not an {MODEL_FORMAT} document")
    try:
        comps = []
        for g, c in enumerate(doc["components"]):
            N = len(c["p0"])
            r = np.full(N, np.nan)
            q = np.full(N, np.nan)
            for s, d in enumerate(c["durations"]):
                if d is not None:
                    r[s], q[s] = float(d["r"]), float(d["q"])
            chain = ChainParams(c["p0"], _unmat(c["P"], f"components[{g}].P"), r, q)
            dyn = [StateDynamics(_unmat(s["A"], "A"), s["B_var"], _unmat(s["C"], "C"),
                                 s["D_var"], _unmat(s["Sigma0"], "Sigma0"))
                   for s in c["states"]]
            comps.append(SslgmParams(dyn, chain))
        model = MixtureModel(comps, _unmat(doc["weight_coeffs"], "weight_coeffs"),
                             meta=doc.get("meta", {}))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed model document: missing or invalid {exc}") from None
    if model.N != doc["N"] or model.G != doc["G"] or model.obs_dim != doc["M"]:
        raise DataError("model header does not match its contents")
    return model


def dumps_model(model: MixtureModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, indent=1) + "\n"


def loads_model(text: str) -> MixtureModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"model file is not valid JSON: {exc}") from None
    return model_from_dict(doc)


def save_model(model: MixtureModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> MixtureModel:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
