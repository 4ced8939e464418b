"""Shared fixtures: small random datasets and brute-force oracles."""

import numpy as np
import pytest

from mvkm import Dataset, HyperParams, InteractionRecord, ViewSpec, init_params


def make_tiny_dataset(
    num_students=4,
    max_attempts=5,
    materials=(3, 2),
    seed=0,
    both_graded=False,
):
    """Random dataset with one record per (student, attempt) slot."""
    rng = np.random.default_rng(seed)
    views = [
        ViewSpec(view_id=0, name="quiz", graded=True, num_materials=materials[0]),
        ViewSpec(
            view_id=1,
            name="discussion",
            graded=both_graded,
            num_materials=materials[1],
        ),
    ]
    records = []
    for s in range(num_students):
        for a in range(max_attempts):
            view = int(rng.integers(0, 2))
            p = int(rng.integers(0, materials[view]))
            if view == 0 or both_graded:
                value = float(rng.uniform())
            else:
                value = 1.0
            records.append(InteractionRecord(s, a, view, p, value))
    return Dataset(
        views=views,
        records=records,
        num_students=num_students,
        max_attempts=max_attempts,
    )


def random_params(hp, ds, seed=0):
    """Random feasible parameters with nonzero biases (unlike init_params)."""
    params = init_params(hp, ds)
    rng = np.random.default_rng(seed)
    params.b_s[:] = rng.normal(scale=0.1, size=params.b_s.shape)
    for r in params.b_p:
        params.b_p[r][:] = rng.normal(scale=0.1, size=params.b_p[r].shape)
    for r in params.b_a:
        params.b_a[r][:] = rng.normal(scale=0.1, size=params.b_a[r].shape)
    params.mu = float(rng.normal(scale=0.1))
    params.T[:] = rng.uniform(0.0, 0.5, size=params.T.shape)
    return params


def brute_force_objective(params, ds, hp, records=None):
    """All-loops objective evaluation, no vectorization anywhere."""
    import math

    if records is None:
        records = ds.records
    graded = {v.view_id: v.graded for v in ds.views}
    l1 = 0.0
    l2 = 0.0
    for rec in records:
        s, a, r, p = rec.student, rec.attempt, rec.view, rec.material
        z = 0.0
        for k in range(params.S.shape[1]):
            for c in range(params.T.shape[1]):
                z += params.S[s, k] * params.T[k, c, a] * params.Q[r][c, p]
        z += params.b_s[s] + params.b_p[r][p] + params.b_a[r][a]
        if graded[r]:
            pred = z
        else:
            pred = 1.0 / (1.0 + math.exp(-(z + params.mu)))
        t_norm = sum(
            params.T[k, c, a] ** 2
            for k in range(params.T.shape[0])
            for c in range(params.T.shape[1])
        )
        s_norm = sum(params.S[s, k] ** 2 for k in range(params.S.shape[1]))
        l1 += (
            hp.gamma_for(r) * (pred - rec.value) ** 2
            + hp.lambda_t * t_norm
            + hp.lambda_s * s_norm
        )
        for j in range(max(0, a - hp.m), a):
            d = 0.0
            for k in range(params.S.shape[1]):
                for c in range(params.T.shape[1]):
                    d += (
                        params.S[s, k]
                        * (params.T[k, c, a] - params.T[k, c, j])
                        * params.Q[r][c, p]
                    )
            l2 += math.log(1.0 / (1.0 + math.exp(-d)))
    return l1 - hp.omega * l2


@pytest.fixture
def tiny_ds():
    return make_tiny_dataset()


@pytest.fixture
def tiny_hp():
    return HyperParams(
        K=2,
        C=2,
        omega=0.2,
        gamma={0: 1.0, 1: 0.1},
        eta=0.05,
        m=2,
        lambda_t=0.01,
        lambda_s=0.001,
        epochs=5,
        seed=0,
    )
