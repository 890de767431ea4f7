"""The structure-matching gate shared by the two model directions.

The matcher holds a bank of candidate "structures": per-feature weight columns
obtained as batch-axis cosines between the forward and inverse embeddings of
the same mini-batch.  A score per structure measures how well the structure-
masked forward embedding matches the inverse embedding.  Features that carry
consistent signal in both embedding spaces end up with strong structures and
high scores; the resulting gate boosts them and damps the rest.

The bank starts as all ones (a uniform pass rate, so the gate is exactly the
identity) and is updated between gradient phases: the lowest-scoring
structures are evicted in favor of fresh candidate columns, then the scores
are rebuilt by a discounted accumulation over fresh batches.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .numcore import batch_cosine, structure_cosine

Pair = tuple[np.ndarray, np.ndarray]


@dataclass
class GraphMatcher:
    structures: np.ndarray  # (n_features, n_structures)
    scores: np.ndarray  # (n_structures,)
    structures_per_step: int
    refresh_substeps: int
    discount: float
    update_interval: int
    literal_cosine: bool = False

    def __post_init__(self) -> None:
        if self.structures.ndim != 2:
            raise ValueError("structures must be 2-D (features x structures)")
        if self.scores.shape != (self.structures.shape[1],):
            raise ValueError("scores length must equal the number of structures")
        if not 1 <= self.structures_per_step < self.n_structures:
            raise ConfigError(
                f"structures_per_step must be in [1, n_structures), got "
                f"{self.structures_per_step} with n_structures={self.n_structures}"
            )
        if self.refresh_substeps < 1:
            raise ConfigError(f"refresh_substeps must be at least 1, got {self.refresh_substeps}")
        if not 0 <= self.discount < 1:
            raise ConfigError(f"discount must be in [0, 1), got {self.discount}")
        if self.update_interval < 1:
            raise ConfigError(f"update_interval must be at least 1, got {self.update_interval}")

    @property
    def n_features(self) -> int:
        return self.structures.shape[0]

    @property
    def n_structures(self) -> int:
        return self.structures.shape[1]

    @classmethod
    def initial(
        cls,
        n_features: int,
        n_structures: int,
        *,
        structures_per_step: int = 8,
        refresh_substeps: int = 4,
        discount: float = 0.9,
        update_interval: int = 50,
        literal_cosine: bool = False,
    ) -> "GraphMatcher":
        """All-ones bank and scores: every feature passes at uniform rate."""
        return cls(
            structures=np.ones((n_features, n_structures)),
            scores=np.ones(n_structures),
            structures_per_step=structures_per_step,
            refresh_substeps=refresh_substeps,
            discount=discount,
            update_interval=update_interval,
            literal_cosine=literal_cosine,
        )

    def copy(self) -> "GraphMatcher":
        return replace(self, structures=self.structures.copy(), scores=self.scores.copy())


def gate_vector(matcher: GraphMatcher, mode: str = "mean") -> np.ndarray:
    """Per-feature pass rate: score-weighted aggregation of the structures.

    ``mean`` keeps the all-ones initialization an exact identity; ``sum``
    scales it by the number of structures.
    """
    if mode == "mean":
        return matcher.structures @ matcher.scores / matcher.n_structures
    if mode == "sum":
        return matcher.structures @ matcher.scores
    raise ConfigError(f"unknown gate mode {mode!r}")


def apply_matcher(h: np.ndarray, matcher: GraphMatcher, mode: str = "mean") -> np.ndarray:
    """Gate a batch of embeddings feature-wise."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != matcher.n_features:
        raise ValueError(
            f"embedding shape {h.shape} does not match {matcher.n_features} features"
        )
    return h * gate_vector(matcher, mode)


def matcher_candidates(
    pairs: Sequence[Pair], rng: np.random.Generator | None = None
) -> np.ndarray:
    """Candidate structure columns: one batch-cosine per embedding pair.

    Columns are stacked in sub-step order and, when a generator is supplied,
    shuffled as whole columns (feature alignment is never disturbed).
    """
    if not pairs:
        raise ValueError("at least one embedding pair is required")
    columns = np.column_stack([batch_cosine(hx, hy) for hx, hy in pairs])
    if rng is not None:
        columns = columns[:, rng.permutation(columns.shape[1])]
    return columns


def matcher_value_refresh(matcher: GraphMatcher, pairs: Sequence[Pair]) -> np.ndarray:
    """Rebuild the scores by discounted accumulation over fresh pairs.

    Scores reset to ones once, then each pair contributes its structure
    cosine on top of the discounted running value.
    """
    if not pairs:
        raise ValueError("at least one embedding pair is required")
    scores = np.ones(matcher.n_structures)
    for hx, hy in pairs:
        scores = matcher.discount * scores + structure_cosine(
            hx, hy, matcher.structures, literal=matcher.literal_cosine
        )
    return scores


def retention_order(scores: np.ndarray, n_keep: int) -> np.ndarray:
    """Indices of the ``n_keep`` highest scores, descending, ties to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= n_keep <= scores.size:
        raise ValueError(f"cannot keep {n_keep} of {scores.size} scores")
    return np.argsort(-scores, kind="stable")[:n_keep]


def matcher_step(
    matcher: GraphMatcher,
    candidate_pairs: Sequence[Pair],
    value_pairs: Sequence[Pair],
    rng: np.random.Generator | None = None,
) -> GraphMatcher:
    """One full structure update.

    The candidate pairs produce the new columns while also discount-
    accumulating the current scores (with the old structures) for ranking;
    the lowest-ranked columns are evicted, the shuffled candidates appended,
    and the scores rebuilt on the value pairs with the new structures.
    """
    p = matcher.structures_per_step
    if len(candidate_pairs) != p:
        raise ValueError(f"expected {p} candidate pairs, got {len(candidate_pairs)}")
    if len(value_pairs) != matcher.refresh_substeps:
        raise ValueError(
            f"expected {matcher.refresh_substeps} value pairs, got {len(value_pairs)}"
        )

    ranking = matcher.scores.copy()
    columns = []
    for hx, hy in candidate_pairs:
        columns.append(batch_cosine(hx, hy))
        ranking = matcher.discount * ranking + structure_cosine(
            hx, hy, matcher.structures, literal=matcher.literal_cosine
        )
    new_columns = np.column_stack(columns)
    if rng is not None:
        new_columns = new_columns[:, rng.permutation(p)]

    keep = retention_order(ranking, matcher.n_structures - p)
    structures = np.concatenate([matcher.structures[:, keep], new_columns], axis=1)
    updated = replace(matcher, structures=structures, scores=np.ones(matcher.n_structures))
    scores = matcher_value_refresh(updated, value_pairs)
    return replace(updated, scores=scores)


def score_bound(discount: float, substeps: int) -> float:
    """Largest score magnitude a refresh can produce from unit cosines."""
    if discount == 0:
        return 1.0
    return discount**substeps + (1 - discount**substeps) / (1 - discount)
