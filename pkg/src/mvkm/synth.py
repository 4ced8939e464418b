"""Synthetic multi-view interaction data.

Students walk a random sequence of materials drawn from two views.  Their
per-concept knowledge starts low, grows with each interaction in
proportion to the material's concept weights, and occasionally drops
(forgetting).  Observed feedback is the inner product of current
knowledge with the material's concept vector; graded scores can be
clipped at 1 to reproduce right-skewed grade distributions, or min-max
rescaled to [0, 1] when an unskewed distribution is wanted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, InteractionRecord, ViewSpec
from .errors import ConfigError


@dataclass
class SynthConfig:
    num_students: int = 1000
    materials_per_view: tuple[int, int] = (10, 15)
    num_concepts: int = 3
    seq_len: int = 20
    forget_threshold: float = 0.15
    gain_scale: tuple[float, float] = (0.05, 0.3)
    forget_magnitude: float = 0.05
    initial_knowledge_max: float = 0.4
    clip_scores: bool = True
    rescale_scores: bool = False
    view2_graded: bool = False
    view_names: tuple[str, str] = ("quiz", "discussion")
    # Optional planted structure: per-archetype gain bounds (students are
    # assigned round-robin), and view-2 materials forced to share a
    # view-1 material's concept vector.
    archetype_gain_scales: list[tuple[float, float]] | None = None
    shared_material_pairs: list[tuple[int, int]] | None = None
    # Students pick materials matching a private concept preference with
    # this softmax strength (0 = uniform choice).  With a preference in
    # play, a student's material history carries information about their
    # knowledge profile in every view, graded or not.
    material_affinity: float = 0.0
    # Dirichlet concentration for concept columns; values below 1 give
    # materials that focus on few concepts.  None keeps flat-ish columns.
    concept_sharpness: float | None = None
    # Probability that an attempt hits the graded view, interpolated
    # linearly from the first to the last attempt.  Courses often front-
    # load quizzes and shift to discussions later (or vice versa); None
    # keeps the uniform-material mix.
    graded_phase: tuple[float, float] | None = None
    seed: int = 0

    def validate(self):
        if self.num_students < 1 or self.num_concepts < 1 or self.seq_len < 1:
            raise ConfigError("counts must be >= 1")
        if any(p < 1 for p in self.materials_per_view):
            raise ConfigError("each view needs at least one material")
        if not (0.0 <= self.forget_threshold <= 1.0):
            raise ConfigError("forget_threshold must lie in [0, 1]")
        if self.forget_magnitude <= 0:
            raise ConfigError("forget_magnitude must be > 0")
        if self.gain_scale[0] > self.gain_scale[1] or self.gain_scale[0] < 0:
            raise ConfigError("gain_scale bounds must satisfy 0 <= low <= high")
        if self.material_affinity < 0:
            raise ConfigError("material_affinity must be >= 0")
        if self.concept_sharpness is not None and self.concept_sharpness <= 0:
            raise ConfigError("concept_sharpness must be > 0")
        if self.graded_phase is not None and not all(
            0.0 <= p <= 1.0 for p in self.graded_phase
        ):
            raise ConfigError("graded_phase probabilities must lie in [0, 1]")


def _random_concept_columns(rng, num_concepts, num_materials):
    q = rng.uniform(0.05, 1.0, size=(num_concepts, num_materials))
    return q / q.sum(axis=0, keepdims=True)


def generate(cfg: SynthConfig):
    """Generate a dataset plus its ground-truth factors.

    Returns ``(dataset, truth)`` where ``truth`` holds the concept maps
    ``Q`` per view, the knowledge tensor ``K`` (students x concepts x
    attempts), and, when archetypes are planted, the per-student
    archetype labels.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    M, C, A = cfg.num_students, cfg.num_concepts, cfg.seq_len
    P1, P2 = cfg.materials_per_view

    if cfg.concept_sharpness is not None:
        q1 = rng.dirichlet(np.full(C, cfg.concept_sharpness), size=P1).T
        q2 = rng.dirichlet(np.full(C, cfg.concept_sharpness), size=P2).T
    else:
        q1 = _random_concept_columns(rng, C, P1)
        q2 = _random_concept_columns(rng, C, P2)
    if cfg.shared_material_pairs:
        for i, j in cfg.shared_material_pairs:
            q2[:, j] = q1[:, i]
    q_by_view = {0: q1, 1: q2}

    if cfg.archetype_gain_scales:
        archetypes = np.array([s % len(cfg.archetype_gain_scales) for s in range(M)])
    else:
        archetypes = None

    knowledge = np.zeros((M, C, A))
    preferences = np.full((M, C), 1.0 / C)
    if cfg.graded_phase is not None:
        p_graded = np.linspace(cfg.graded_phase[0], cfg.graded_phase[1], A)
    else:
        p_graded = np.full(A, P1 / (P1 + P2))
    raw = []  # (student, attempt, view, material, raw score)
    for s in range(M):
        if archetypes is not None:
            gain_lo, gain_hi = cfg.archetype_gain_scales[archetypes[s]]
        else:
            gain_lo, gain_hi = cfg.gain_scale
        k = rng.uniform(0.0, cfg.initial_knowledge_max, size=C)
        if cfg.material_affinity > 0.0 or cfg.graded_phase is not None:
            choice_probs = None
            if cfg.material_affinity > 0.0:
                w = rng.dirichlet(np.full(C, 0.5))
                preferences[s] = w
                choice_probs = {}
                for view, q in q_by_view.items():
                    logits = cfg.material_affinity * (w @ q)
                    ex = np.exp(logits - logits.max())
                    choice_probs[view] = ex / ex.sum()
            in_view2 = rng.uniform(size=A) >= p_graded
            picks = []
            for v2 in in_view2:
                view, count = (1, P2) if v2 else (0, P1)
                if choice_probs is not None:
                    p = rng.choice(count, p=choice_probs[view])
                else:
                    p = rng.integers(0, count)
                picks.append(P1 + p if v2 else p)
            materials = np.array(picks)
        else:
            materials = rng.integers(0, P1 + P2, size=A)
        for a in range(A):
            m = int(materials[a])
            view, p = (0, m) if m < P1 else (1, m - P1)
            q_col = q_by_view[view][:, p]
            if a > 0:
                alpha = rng.uniform()
                if alpha >= cfg.forget_threshold:
                    beta = rng.uniform(gain_lo, gain_hi)
                    k = k + beta * q_col
                else:
                    k = np.maximum(k - rng.uniform(0.0, cfg.forget_magnitude, size=C), 0.0)
            knowledge[s, :, a] = k
            raw.append((s, a, view, p, float(k @ q_col)))

    graded_views = {0} | ({1} if cfg.view2_graded else set())
    values = np.array([v for *_, v in raw])
    graded_mask = np.array([view in graded_views for _, _, view, _, _ in raw])
    if cfg.clip_scores:
        values[graded_mask] = np.minimum(values[graded_mask], 1.0)
    elif cfg.rescale_scores and graded_mask.any():
        g = values[graded_mask]
        span = g.max() - g.min()
        if span > 0:
            values[graded_mask] = (g - g.min()) / span
    values[~graded_mask] = 1.0

    records = [
        InteractionRecord(student=s, attempt=a, view=view, material=p, value=float(v))
        for (s, a, view, p, _), v in zip(raw, values)
    ]
    views = [
        ViewSpec(view_id=0, name=cfg.view_names[0], graded=True, num_materials=P1),
        ViewSpec(
            view_id=1,
            name=cfg.view_names[1],
            graded=cfg.view2_graded,
            num_materials=P2,
        ),
    ]
    ds = Dataset(views=views, records=records, num_students=M, max_attempts=A)
    truth = {"Q": q_by_view, "K": knowledge}
    if archetypes is not None:
        truth["archetypes"] = archetypes
    if cfg.material_affinity > 0.0:
        truth["preferences"] = preferences
    return ds, truth
