"""Objective, analytic gradients, SGD training, and test-student fold-in.

The training objective combines a weighted squared reconstruction error
over all observed interactions (with L2 regularization of the touched
T slice and student row) and a rank-based log-sigmoid penalty that
rewards predicted-score increases between an attempt and the ``m``
attempts immediately preceding it.  The penalty enters with weight
``omega`` and is subtracted (it is maximized).

The SGD inner loop is compiled (:mod:`mvkm._kernel`); ``gradients``
below is the plain-numpy reference implementation that the kernel and
the finite-difference tests are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernel
from .data import Dataset, InteractionRecord
from .errors import ConfigError, IntegrityError, TrainingError
from .model import (
    HyperParams,
    ModelParams,
    init_params,
    sigmoid,
    validate_params,
)

ABLATIONS = ("full", "base", "no_penalty")


@dataclass(frozen=True)
class ObjectiveBreakdown:
    l1: float
    l2: float
    omega: float

    @property
    def total(self) -> float:
        return self.l1 - self.omega * self.l2


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, n + 1) > (css - 1.0))[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _graded_map(ds: Dataset) -> dict[int, bool]:
    return {v.view_id: v.graded for v in ds.views}


class _Packed:
    """Flat-array view of params + records for the compiled SGD pass.

    S, T, and b_s are shared with the ModelParams (updated in place);
    the per-view Q, b_p, b_a, and mu are packed copies written back by
    :meth:`unpack`.
    """

    def __init__(self, params: ModelParams, ds: Dataset, hp: HyperParams, records):
        self.view_ids = sorted(params.Q)
        self.offsets = {}
        off = 0
        for r in self.view_ids:
            self.offsets[r] = off
            off += params.Q[r].shape[1]
        row = {r: i for i, r in enumerate(self.view_ids)}
        self.S = params.S
        self.T = params.T
        self.b_s = params.b_s
        self.Qall = np.concatenate([params.Q[r] for r in self.view_ids], axis=1)
        self.b_p = np.concatenate([params.b_p[r] for r in self.view_ids])
        if hp.shared_attempt_bias:
            self.ba_row = np.zeros(len(self.view_ids), dtype=np.int64)
            self.b_a = params.b_a[self.view_ids[0]][None, :].copy()
        else:
            self.ba_row = np.arange(len(self.view_ids), dtype=np.int64)
            self.b_a = np.stack([params.b_a[r] for r in self.view_ids])
        self.mu_arr = np.array([params.mu])
        graded = _graded_map(ds)
        self.graded = np.array([graded[r] for r in self.view_ids])
        self.gamma = np.array([hp.gamma_for(r) for r in self.view_ids])
        self.s_arr = np.array([rec.student for rec in records], dtype=np.int64)
        self.a_arr = np.array([rec.attempt for rec in records], dtype=np.int64)
        self.r_arr = np.array([row[rec.view] for rec in records], dtype=np.int64)
        self.p_arr = np.array(
            [rec.material + self.offsets[rec.view] for rec in records], dtype=np.int64
        )
        self.x_arr = np.array([rec.value for rec in records])

    def sgd_pass(self, hp: HyperParams, order, update_globals=True):
        _kernel.sgd_pass(
            self.S,
            self.T,
            self.Qall,
            self.b_s,
            self.b_p,
            self.b_a,
            self.ba_row,
            self.mu_arr,
            self.s_arr,
            self.a_arr,
            self.r_arr,
            self.p_arr,
            self.x_arr,
            order,
            self.graded,
            self.gamma,
            hp.eta,
            hp.omega,
            hp.lambda_t,
            hp.lambda_s,
            hp.m,
            hp.constrain_s,
            update_globals,
        )

    def unpack(self, params: ModelParams):
        for i, r in enumerate(self.view_ids):
            off = self.offsets[r]
            num = params.Q[r].shape[1]
            params.Q[r][:] = self.Qall[:, off : off + num]
            params.b_p[r][:] = self.b_p[off : off + num]
            params.b_a[r][:] = self.b_a[self.ba_row[i]]
        params.mu = float(self.mu_arr[0])


def objective(
    params: ModelParams, ds: Dataset, hp: HyperParams, records=None
) -> ObjectiveBreakdown:
    """Evaluate the training objective over ``records`` (default: all)."""
    if records is None:
        records = ds.records
    if not records:
        return ObjectiveBreakdown(0.0, 0.0, hp.omega)
    view_ids = sorted(params.Q)
    row = {r: i for i, r in enumerate(view_ids)}
    offsets = {}
    off = 0
    for r in view_ids:
        offsets[r] = off
        off += params.Q[r].shape[1]
    qall = np.concatenate([params.Q[r] for r in view_ids], axis=1)
    b_p = np.concatenate([params.b_p[r] for r in view_ids])
    b_a = np.stack([params.b_a[r] for r in view_ids])
    graded_by = _graded_map(ds)
    graded = np.array([graded_by[r] for r in view_ids])
    gamma = np.array([hp.gamma_for(r) for r in view_ids])

    s_arr = np.array([rec.student for rec in records])
    a_arr = np.array([rec.attempt for rec in records])
    r_arr = np.array([row[rec.view] for rec in records])
    p_arr = np.array([rec.material + offsets[rec.view] for rec in records])
    x_arr = np.array([rec.value for rec in records])

    t_by_attempt = np.ascontiguousarray(np.transpose(params.T, (2, 0, 1)))
    u = params.S[s_arr]
    v = qall[:, p_arr].T
    inner = np.einsum("nk,nkc,nc->n", u, t_by_attempt[a_arr], v)
    z = inner + params.b_s[s_arr] + b_p[p_arr] + b_a[r_arr, a_arr]
    gmask = graded[r_arr]
    pred = np.where(gmask, z, sigmoid(z + params.mu))
    err = pred - x_arr
    t_norms = (params.T**2).sum(axis=(0, 1))
    s_norms = (params.S**2).sum(axis=1)
    l1 = float(
        (gamma[r_arr] * err**2).sum()
        + hp.lambda_t * t_norms[a_arr].sum()
        + hp.lambda_s * s_norms[s_arr].sum()
    )
    l2 = 0.0
    if hp.omega > 0.0:
        for offset in range(1, hp.m + 1):
            mask = a_arr >= offset
            if not mask.any():
                break
            diff = t_by_attempt[a_arr[mask]] - t_by_attempt[a_arr[mask] - offset]
            d = np.einsum("nk,nkc,nc->n", u[mask], diff, v[mask])
            l2 += float(-np.logaddexp(0.0, -d).sum())  # sum of log sigmoid(d)
    return ObjectiveBreakdown(l1, l2, hp.omega)


@dataclass
class GradientBundle:
    """Gradients with the same shapes as ModelParams."""

    S: np.ndarray
    T: np.ndarray
    Q: dict[int, np.ndarray]
    b_s: np.ndarray
    b_p: dict[int, np.ndarray]
    b_a: dict[int, np.ndarray]
    mu: float = 0.0


def gradients(
    params: ModelParams, batch, hp: HyperParams, ds: Dataset
) -> GradientBundle:
    """Analytic partials of the objective restricted to ``batch``.

    Reference implementation: loops records and applies the chain rule
    term by term.  The compiled SGD pass follows the same formulas.
    """
    graded = _graded_map(ds)
    g = GradientBundle(
        S=np.zeros_like(params.S),
        T=np.zeros_like(params.T),
        Q={r: np.zeros_like(q) for r, q in params.Q.items()},
        b_s=np.zeros_like(params.b_s),
        b_p={r: np.zeros_like(b) for r, b in params.b_p.items()},
        b_a={r: np.zeros_like(b) for r, b in params.b_a.items()},
        mu=0.0,
    )
    for rec in batch:
        s, a, r, p = rec.student, rec.attempt, rec.view, rec.material
        sv = params.S[s]
        qv = params.Q[r][:, p]
        Ta = params.T[:, :, a]
        z = (
            float(sv @ Ta @ qv)
            + params.b_s[s]
            + params.b_p[r][p]
            + params.b_a[r][a]
        )
        if graded[r]:
            coeff = 2.0 * hp.gamma_for(r) * (z - rec.value)
        else:
            sig = float(sigmoid(z + params.mu))
            coeff = 2.0 * hp.gamma_for(r) * (sig - rec.value) * sig * (1.0 - sig)
            g.mu += coeff
        g.S[s] += coeff * (Ta @ qv)
        g.T[:, :, a] += coeff * np.outer(sv, qv)
        g.Q[r][:, p] += coeff * (Ta.T @ sv)
        g.b_s[s] += coeff
        g.b_p[r][p] += coeff
        g.b_a[r][a] += coeff
        # per-record regularizer contributions
        g.T[:, :, a] += 2.0 * hp.lambda_t * Ta
        g.S[s] += 2.0 * hp.lambda_s * sv
        if hp.omega > 0.0:
            for j in range(max(0, a - hp.m), a):
                diff = Ta - params.T[:, :, j]
                d = float(sv @ diff @ qv)
                pen = -hp.omega * (1.0 - float(sigmoid(d)))
                g.S[s] += pen * (diff @ qv)
                outer = np.outer(sv, qv)
                g.T[:, :, a] += pen * outer
                g.T[:, :, j] -= pen * outer
                g.Q[r][:, p] += pen * (diff.T @ sv)
    return g


def _effective_hp(hp: HyperParams, ablation: str) -> HyperParams:
    hp.validate()
    if ablation == "no_penalty" and hp.omega != 0.0:
        return replace(hp, omega=0.0)
    return hp


def fit(
    ds: Dataset,
    hp: HyperParams,
    ablation: str = "full",
    init: ModelParams | None = None,
    callback=None,
):
    """Train by SGD over shuffled observed records.

    ``base`` restricts training to graded-view records only;
    ``no_penalty`` drops the rank-based penalty (omega = 0).
    Returns (params, history) where history holds one
    ObjectiveBreakdown per epoch, evaluated on the training records.
    """
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}")
    hp = _effective_hp(hp, ablation)
    graded = _graded_map(ds)
    records = ds.records
    if ablation == "base":
        records = [r for r in records if graded[r.view]]
    if not records:
        raise ConfigError("no training records")
    params = init.copy() if init is not None else init_params(hp, ds)
    packed = _Packed(params, ds, hp, records)
    rng = np.random.default_rng(hp.seed)
    order = np.arange(len(records), dtype=np.int64)
    history = []
    best = np.inf
    stall = 0
    for epoch in range(hp.epochs):
        rng.shuffle(order)
        packed.sgd_pass(hp, order)
        packed.unpack(params)
        br = objective(params, ds, hp, records=records)
        if not np.isfinite(br.total):
            raise TrainingError(f"objective diverged at epoch {epoch}")
        try:
            validate_params(params, constrain_s=hp.constrain_s)
        except IntegrityError as e:
            # overflow inside an update can break feasibility before the
            # objective itself goes non-finite
            raise TrainingError(f"parameters diverged at epoch {epoch}: {e}")
        history.append(br)
        if callback is not None:
            callback(epoch, params, br)
        if best - br.total < hp.tol * max(1.0, abs(best)):
            stall += 1
            if stall >= hp.patience:
                break
        else:
            stall = 0
        best = min(best, br.total)
    return params, history


def fold_in(
    params: ModelParams,
    prefix,
    hp: HyperParams,
    ds: Dataset,
    ablation: str = "full",
) -> ModelParams:
    """Estimate latent rows and biases for unseen students.

    T, Q, material/attempt biases, and mu stay frozen; only each prefix
    student's feature row and bias are optimized against that student's
    prefix records, by the same SGD rule.
    """
    hp = _effective_hp(hp, ablation)
    graded = _graded_map(ds)
    out = params.copy()
    by_student: dict[int, list[InteractionRecord]] = {}
    for rec in prefix:
        by_student.setdefault(rec.student, []).append(rec)
    for student in sorted(by_student):
        recs = by_student[student]
        if ablation == "base":
            recs = [r for r in recs if graded[r.view]]
        if not recs:
            # cold start: uniform membership, neutral bias
            out.S[student] = np.full(out.S.shape[1], 1.0 / out.S.shape[1])
            out.b_s[student] = 0.0
            continue
        rng = np.random.default_rng((hp.seed, student))
        fresh = rng.uniform(0.1, 1.0, size=out.S.shape[1])
        out.S[student] = fresh / fresh.sum()
        out.b_s[student] = 0.0
        packed = _Packed(out, ds, hp, recs)
        n = len(recs)
        order = np.concatenate(
            [rng.permutation(n) for _ in range(hp.epochs)]
        ).astype(np.int64)
        packed.sgd_pass(hp, order, update_globals=False)
    return out


def online_update(params: ModelParams, rec, hp: HyperParams, ds: Dataset):
    """One incremental SGD step on a newly revealed record (student terms only)."""
    packed = _Packed(params, ds, hp, [rec])
    packed.sgd_pass(hp, np.zeros(1, dtype=np.int64), update_globals=False)
