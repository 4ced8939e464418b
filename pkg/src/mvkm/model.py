"""Model parameters, forward prediction, and the derived knowledge tensor.

A graded score is predicted by the affine trilinear form

    score(s, a, p, r) = s_s . T_a . q_p^[r] + b_s + b_p^[r] + b_a^[r]

and a non-graded (or binary) interaction by the sigmoid of the same form
shifted by a global offset.  Student rows of S and material columns of
each Q live on the probability simplex.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import Dataset
from .errors import ConfigError, IntegrityError

CHECKPOINT_VERSION = 1


@dataclass
class HyperParams:
    K: int = 3
    C: int = 3
    omega: float = 0.2
    gamma: dict[int, float] = field(default_factory=lambda: {0: 1.0, 1: 0.1})
    eta: float = 0.1
    m: int = 1
    lambda_t: float = 0.01
    lambda_s: float = 0.001
    epochs: int = 100
    seed: int = 0
    constrain_s: bool = True
    shared_attempt_bias: bool = False
    batch_size: int = 1
    tol: float = 1e-5
    patience: int = 5

    def validate(self):
        if self.K < 1 or self.C < 1 or self.m < 1 or self.epochs < 1:
            raise ConfigError("K, C, m, epochs must be >= 1")
        if min(self.omega, self.eta, self.lambda_t, self.lambda_s) < 0:
            raise ConfigError("omega, eta, lambda_t, lambda_s must be >= 0")
        if any(g < 0 for g in self.gamma.values()):
            raise ConfigError("gamma weights must be >= 0")

    def gamma_for(self, view_id: int) -> float:
        return self.gamma.get(view_id, 1.0)


@dataclass
class ModelParams:
    """All learned factors.

    S: (M, K) student features, rows on the simplex.
    T: (K, C, A) temporal knowledge tensor.
    Q: per view, (C, P_r) concept-to-material map, columns on the simplex.
    b_s: (M,) student bias; b_p / b_a: per-view material / attempt biases.
    mu: global offset used inside sigmoid views only.
    """

    S: np.ndarray
    T: np.ndarray
    Q: dict[int, np.ndarray]
    b_s: np.ndarray
    b_p: dict[int, np.ndarray]
    b_a: dict[int, np.ndarray]
    mu: float = 0.0

    def copy(self) -> "ModelParams":
        return ModelParams(
            S=self.S.copy(),
            T=self.T.copy(),
            Q={r: q.copy() for r, q in self.Q.items()},
            b_s=self.b_s.copy(),
            b_p={r: b.copy() for r, b in self.b_p.items()},
            b_a={r: b.copy() for r, b in self.b_a.items()},
            mu=self.mu,
        )

    @property
    def num_students(self) -> int:
        return self.S.shape[0]

    @property
    def num_attempts(self) -> int:
        return self.T.shape[2]


def init_params(hp: HyperParams, ds: Dataset) -> ModelParams:
    """Seeded random initialization honoring the simplex constraints."""
    hp.validate()
    rng = np.random.default_rng(hp.seed)
    M, A = ds.num_students, ds.max_attempts
    s = rng.uniform(0.1, 1.0, size=(M, hp.K))
    s /= s.sum(axis=1, keepdims=True)
    t = rng.uniform(0.0, 0.1, size=(hp.K, hp.C, A))
    q = {}
    for v in ds.views:
        qv = rng.uniform(0.1, 1.0, size=(hp.C, v.num_materials))
        q[v.view_id] = qv / qv.sum(axis=0, keepdims=True)
    if hp.shared_attempt_bias:
        shared = np.zeros(A)
        b_a = {v.view_id: shared for v in ds.views}
    else:
        b_a = {v.view_id: np.zeros(A) for v in ds.views}
    return ModelParams(
        S=s,
        T=t,
        Q=q,
        b_s=np.zeros(M),
        b_p={v.view_id: np.zeros(v.num_materials) for v in ds.views},
        b_a=b_a,
        mu=0.0,
    )


def trilinear(params: ModelParams, s: int, a: int, p: int, r: int) -> float:
    """Raw factor interaction s_s . T_a . q_p, without biases."""
    return float(params.S[s] @ params.T[:, :, a] @ params.Q[r][:, p])


def _affine(params: ModelParams, s: int, a: int, p: int, r: int) -> float:
    return (
        trilinear(params, s, a, p, r)
        + params.b_s[s]
        + params.b_p[r][p]
        + params.b_a[r][a]
    )


def _check_indices(params, s, a, p, r):
    if r not in params.Q:
        raise ConfigError(f"unknown view {r}")
    if not (0 <= s < params.S.shape[0]):
        raise ConfigError(f"student index {s} out of range")
    if not (0 <= a < params.T.shape[2]):
        raise ConfigError(f"attempt index {a} out of range")
    if not (0 <= p < params.Q[r].shape[1]):
        raise ConfigError(f"material index {p} out of range")


def predict_graded(params: ModelParams, s: int, a: int, p: int, r: int) -> float:
    """Raw (unclipped) score prediction for a graded view."""
    _check_indices(params, s, a, p, r)
    return _affine(params, s, a, p, r)


def predict_graded_clipped(params: ModelParams, s, a, p, r) -> float:
    """Score prediction clipped to [0, 1] for reporting."""
    return float(np.clip(predict_graded(params, s, a, p, r), 0.0, 1.0))


def sigmoid(z):
    return expit(z)


def predict_nongraded(params: ModelParams, s: int, a: int, p: int, r: int) -> float:
    """Interaction probability for a non-graded (or binary) view."""
    _check_indices(params, s, a, p, r)
    return float(sigmoid(_affine(params, s, a, p, r) + params.mu))


def predict(params: ModelParams, ds: Dataset, s, a, p, r) -> float:
    if ds.view(r).graded:
        return predict_graded(params, s, a, p, r)
    return predict_nongraded(params, s, a, p, r)


def knowledge(params: ModelParams) -> np.ndarray:
    """Knowledge tensor (students x concepts x attempts) = S contracted with T."""
    return np.einsum("mk,kca->mca", params.S, params.T)


def validate_params(params: ModelParams, atol: float = 1e-6, constrain_s: bool = True):
    """Raise IntegrityError if simplex or finiteness invariants are broken."""
    arrays = [params.S, params.T, params.b_s, np.array(params.mu)]
    arrays += list(params.Q.values()) + list(params.b_p.values())
    arrays += list(params.b_a.values())
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise IntegrityError("non-finite model parameter")
    if constrain_s:
        if np.any(params.S < -atol):
            raise IntegrityError("negative entry in student feature matrix")
        if np.any(np.abs(params.S.sum(axis=1) - 1.0) > atol):
            raise IntegrityError("student feature row does not sum to 1")
    for r, q in params.Q.items():
        if np.any(q < -atol):
            raise IntegrityError(f"negative entry in concept map of view {r}")
        if np.any(np.abs(q.sum(axis=0) - 1.0) > atol):
            raise IntegrityError(f"concept column of view {r} does not sum to 1")


def save_params(params: ModelParams, hp: HyperParams, path):
    """Write a checkpoint as a single JSON file (row-major flattened arrays)."""
    def arr(a):
        return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}

    obj = {
        "format_version": CHECKPOINT_VERSION,
        "S": arr(params.S),
        "T": arr(params.T),
        "Q": {str(r): arr(q) for r, q in params.Q.items()},
        "b_s": arr(params.b_s),
        "b_p": {str(r): arr(b) for r, b in params.b_p.items()},
        "b_a": {str(r): arr(b) for r, b in params.b_a.items()},
        "mu": params.mu,
        "hyperparams": {
            "K": hp.K,
            "C": hp.C,
            "omega": hp.omega,
            "gamma": {str(r): g for r, g in hp.gamma.items()},
            "eta": hp.eta,
            "m": hp.m,
            "lambda_t": hp.lambda_t,
            "lambda_s": hp.lambda_s,
            "epochs": hp.epochs,
            "seed": hp.seed,
            "constrain_s": hp.constrain_s,
            "shared_attempt_bias": hp.shared_attempt_bias,
            "batch_size": hp.batch_size,
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True)
        f.write("\n")


def load_params(path):
    """Load a checkpoint; returns (ModelParams, HyperParams)."""
    with open(path, encoding="utf-8") as f:
        obj = json.load(f)
    if obj.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint version {obj.get('format_version')!r}"
        )

    def arr(d):
        return np.array(d["data"]).reshape(d["shape"])

    h = obj["hyperparams"]
    hp = HyperParams(
        K=h["K"],
        C=h["C"],
        omega=h["omega"],
        gamma={int(r): g for r, g in h["gamma"].items()},
        eta=h["eta"],
        m=h["m"],
        lambda_t=h["lambda_t"],
        lambda_s=h["lambda_s"],
        epochs=h["epochs"],
        seed=h["seed"],
        constrain_s=h.get("constrain_s", True),
        shared_attempt_bias=h.get("shared_attempt_bias", False),
        batch_size=h.get("batch_size", 1),
    )
    params = ModelParams(
        S=arr(obj["S"]),
        T=arr(obj["T"]),
        Q={int(r): arr(q) for r, q in obj["Q"].items()},
        b_s=arr(obj["b_s"]),
        b_p={int(r): arr(b) for r, b in obj["b_p"].items()},
        b_a={int(r): arr(b) for r, b in obj["b_a"].items()},
        mu=float(obj["mu"]),
    )
    return params, hp
