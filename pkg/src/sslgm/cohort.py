"""Synthetic informatively-censored cohorts and dataset I/O.

Datasets are JSON-lines files: a header line carrying the format tag
``sslgm-data/1`` followed by one patient record per line. Ground truth goes
to a separate sidecar file (``sslgm-truth/1``) that learning code never reads.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError
from .lgm_core import StateDynamics, sample_path
from .model import MixtureModel, SslgmParams
from .semi_markov import ChainParams, SuperStateSeq, sample_superstate_path

log = logging.getLogger(__name__)

DATA_FORMAT = "sslgm-data/1"
TRUTH_FORMAT = "sslgm-truth/1"
MAX_RESAMPLE = 10_000

# learned chain reported for the 3-state model: initial probabilities,
# down/up probabilities of state 2 and its dwell-time distribution
REFERENCE_P0 = (0.44, 0.54, 0.02)
REFERENCE_P21 = 0.94
REFERENCE_DURATION = (1.4541, 0.839)


@dataclass(eq=False)
class PatientRecord:
    id: str
    q: np.ndarray
    Y: np.ndarray
    F: int
    step_hours: float = 4.0

    def __post_init__(self):
        self.q = np.atleast_1d(np.asarray(self.q, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        self.F = int(self.F)

    @property
    def J(self) -> int:
        return self.Y.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PatientRecord):
            return NotImplemented
        return (self.id == other.id and self.F == other.F and self.step_hours == other.step_hours
                and np.array_equal(self.q, other.q) and np.array_equal(self.Y, other.Y))


@dataclass
class GroundTruth:
    id: str
    S: list[int]
    T: list[int]
    g: int

    def step_labels(self) -> np.ndarray:
        return SuperStateSeq(self.S, self.T).expand()


@dataclass
class CovariateSampler:
    """Standard-normal covariates followed by optional one-hot categorical blocks."""

    n_continuous: int = 1
    categorical: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.n_continuous + sum(len(p) for p in self.categorical)

    def sample(self, rng) -> np.ndarray:
        parts = [rng.standard_normal(self.n_continuous)]
        for probs in self.categorical:
            onehot = np.zeros(len(probs))
            onehot[rng.choice(len(probs), p=probs)] = 1.0
            parts.append(onehot)
        return np.concatenate(parts)


@dataclass
class CohortSpec:
    K: int
    model: MixtureModel
    covariates: CovariateSampler = field(default_factory=CovariateSampler)
    max_stay: int = 500
    seed: int = 0
    step_hours: float = 4.0

    def check(self) -> None:
        if self.K < 1:
            raise ConfigurationError("K must be >= 1")
        if self.max_stay < 1:
            raise ConfigurationError("max_stay must be >= 1")
        if self.covariates.dim != self.model.q_dim:
            raise ConfigurationError(
                f"covariate sampler gives {self.covariates.dim} covariates, model expects {self.model.q_dim}")


@dataclass
class Cohort:
    records: list[PatientRecord]
    truth: list[GroundTruth]
    n_resampled: int = 0


def patient_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def generate_patient(spec: CohortSpec, index: int) -> tuple[PatientRecord, GroundTruth, int]:
    rng = patient_rng(spec.seed, index)
    q = spec.covariates.sample(rng)
    g = int(rng.choice(spec.model.G, p=spec.model.weights(q)))
    comp = spec.model.components[g]
    for tries in range(MAX_RESAMPLE):
        seq, censored = sample_superstate_path(comp.chain, rng, spec.max_stay)
        if not censored:
            break
    else:
        raise ConfigurationError("chain never absorbs within max_stay; check its parameters")
    labels = seq.expand()
    _, Y = sample_path(comp.dynamics_for(labels), len(labels), rng)
    F = int(seq.states[-1] == comp.N)
    pid = f"p{index:06d}"
    return (PatientRecord(pid, q, Y, F, spec.step_hours),
            GroundTruth(pid, list(map(int, seq.states)), list(map(int, seq.durations)), g),
            tries)


def generate_cohort(spec: CohortSpec) -> Cohort:
    """Sample K episodes, each ending in a declared absorbing state.

    Episodes that exceed ``max_stay`` are redrawn; the number of redraws is
    reported because it biases the cohort toward fast absorption.
    """
    spec.check()
    records, truth = [], []
    resampled = 0
    for k in range(spec.K):
        rec, gt, tries = generate_patient(spec, k)
        records.append(rec)
        truth.append(gt)
        resampled += tries
    rate = resampled / (spec.K + resampled)
    if rate > 0.2:
        warnings.warn(f"{rate:.0%} of sampled episodes exceeded max_stay and were redrawn",
                      RuntimeWarning, stacklevel=2)
    return Cohort(records, truth, resampled)


def reference_model(separation: float = 2.0, M: int = 3, latent_dim: int = 2,
                    p0=REFERENCE_P0, p_down=REFERENCE_P21, duration=REFERENCE_DURATION,
                    q_dim: int = 1, scale: float = 1.0) -> MixtureModel:
    """A single-component model with the reference 3-state chain.

    The model has no mean term, so states differ in emission scale and
    persistence: the emission standard deviation grows by ``separation``
    from each state to the next more severe one.
    """
    N = len(p0)
    chain = ChainParams.gamblers_ruin(p0, p_down, duration[0], duration[1])
    rng = np.random.default_rng(12345)
    base, _ = np.linalg.qr(rng.standard_normal((M, latent_dim)))
    dyn = []
    for s in range(N):
        a = 0.3 + 0.6 * s / max(N - 1, 1)
        sd = scale * separation ** (s - (N - 1) / 2)
        A = a * np.eye(latent_dim)
        dyn.append(StateDynamics(A, np.full(latent_dim, 1.0 - a * a), sd * base,
                                 np.full(M, (0.3 * sd) ** 2), np.eye(latent_dim)))
    return MixtureModel([SslgmParams(dyn, chain)], np.zeros((1, q_dim + 1)))


# --- I/O ----------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def record_to_dict(rec: PatientRecord) -> dict:
    return {"id": rec.id, "q": [float(x) for x in rec.q], "J": rec.J,
            "Y": [[float(x) for x in row] for row in rec.Y], "F": rec.F,
            "step_hours": float(rec.step_hours)}


def write_dataset(records, path, meta: dict | None = None) -> None:
    records = list(records)
    M = records[0].Y.shape[1] if records else 0
    qd = len(records[0].q) if records else 0
    header = {"format": DATA_FORMAT, "K": len(records), "M": M, "q_dim": qd}
    if meta:
        header["meta"] = meta
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dump(header) + "\n")
        for rec in records:
            fh.write(_dump(record_to_dict(rec)) + "\n")


def _field(obj, name, line):
    if name not in obj:
        raise DataError("missing field", line, name)
    return obj[name]


def _parse_record(obj, line: int, M: int | None, qd: int | None) -> PatientRecord:
    if not isinstance(obj, dict):
        raise DataError("record must be a JSON object", line)
    pid = _field(obj, "id", line)
    if not isinstance(pid, str) or not pid:
        raise DataError("must be a non-empty string", line, "id")
    F = _field(obj, "F", line)
    if isinstance(F, bool) or F not in (0, 1):
        raise DataError(f"must be 0 or 1, got {F!r}", line, "F")
    q = _field(obj, "q", line)
    try:
        q = np.asarray(q, dtype=float)
    except (TypeError, ValueError):
        raise DataError("must be an array of numbers", line, "q") from None
    if q.ndim != 1 or (qd is not None and len(q) != qd):
        raise DataError(f"must have length {qd}", line, "q")
    Y = _field(obj, "Y", line)
    if not isinstance(Y, list) or not Y:
        raise DataError("must be a non-empty array of rows", line, "Y")
    try:
        Y = np.asarray(Y, dtype=float)
    except (TypeError, ValueError):
        raise DataError("rows must be equally long arrays of numbers", line, "Y") from None
    if Y.ndim != 2 or (M is not None and Y.shape[1] != M):
        raise DataError(f"rows must have {M} channels", line, "Y")
    if not np.all(np.isfinite(Y)):
        t, m = np.argwhere(~np.isfinite(Y))[0]
        raise DataError(f"non-finite value at row {t}, channel {m}", line, "Y")
    if "J" in obj and obj["J"] != Y.shape[0]:
        raise DataError(f"J={obj['J']} but Y has {Y.shape[0]} rows", line, "J")
    hours = obj.get("step_hours", 4.0)
    if not isinstance(hours, (int, float)) or isinstance(hours, bool) or not hours > 0:
        raise DataError("must be a positive number", line, "step_hours")
    return PatientRecord(pid, q, Y, F, float(hours))


def _read_lines(path, fmt):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DataError("empty file; expected a header line", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc.msg}", 1) from None
    if not isinstance(header, dict) or header.get("format") != fmt:
        raise DataError(f"header must declare format {fmt!r}", 1, "format")
    for n, text in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON: {exc.msg}", n) from None
        yield header, n, obj


def read_dataset(path) -> list[PatientRecord]:
    records = []
    seen = set()
    M = qd = None
    for header, n, obj in _read_lines(path, DATA_FORMAT):
        if M is None:
            M = header.get("M") or None
            qd = header.get("q_dim")
        rec = _parse_record(obj, n, M, qd)
        if rec.id in seen:
            raise DataError(f"duplicate id {rec.id!r}", n, "id")
        seen.add(rec.id)
        M, qd = rec.Y.shape[1], len(rec.q)
        records.append(rec)
    return records


def write_truth(truth, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dump({"format": TRUTH_FORMAT}) + "\n")
        for gt in truth:
            fh.write(_dump({"id": gt.id, "S": gt.S, "T": gt.T, "g": gt.g}) + "\n")


def read_truth(path) -> list[GroundTruth]:
    out = []
    for _, n, obj in _read_lines(path, TRUTH_FORMAT):
        try:
            out.append(GroundTruth(str(obj["id"]), [int(s) for s in obj["S"]],
                                   [int(t) for t in obj["T"]], int(obj["g"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed truth record: {exc}", n) from None
    return out
