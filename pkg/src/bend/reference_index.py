"""Exact cosine retrieval over labeled embedding tables.

A deliberate linear scan: desk-scale corpora make exactness cheap, and
auditable fairness math is worth more than approximate speed. Ties always
break by ascending record id so runs are reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .augment import AttributeSpace
from .dataset import LabeledEmbeddingTable
from .errors import ConfigError, EmptyGroup, EmptyTable, TooFewPoints, UnknownLabel
from .vectors import Vector, ZERO_NORM_EPS, as_vector, mean_embedding, normalize


@dataclass(frozen=True)
class RelevantSubsets:
    """Per-attribute-value relevant records: indices, raw means, and vectors."""

    indices: dict[str, tuple[int, ...]]
    means: dict[str, Vector]
    vectors: dict[str, np.ndarray]

    @property
    def n_used(self) -> dict[str, int]:
        return {value: len(ix) for value, ix in self.indices.items()}

    def group_vectors(self) -> dict[str, np.ndarray]:
        return self.vectors


@dataclass(frozen=True)
class Retrieved:
    id: str
    similarity: float
    labels: dict[str, str]
    class_label: str | None
    row: int


class ReferenceIndex:
    """Immutable index: normalized matrix plus per-attribute-value partitions."""

    def __init__(self, table: LabeledEmbeddingTable):
        norms = np.linalg.norm(table.vectors, axis=1)
        if np.any(norms <= ZERO_NORM_EPS):
            raise EmptyTable("table contains zero vectors; normalize on ingest")
        self.table = table
        self.matrix = table.vectors / norms[:, None]
        self.partitions: dict[str, dict[str, np.ndarray]] = {}
        for name, space in table.spaces.items():
            labels = np.array(table.attributes[name])
            self.partitions[name] = {
                value: np.flatnonzero(labels == value) for value in space.values
            }

    def partition(self, attribute: str) -> dict[str, np.ndarray]:
        if attribute not in self.partitions:
            raise UnknownLabel(f"attribute {attribute!r} is not declared in the table")
        return self.partitions[attribute]

    def group_means(self, attribute: str) -> dict[str, Vector]:
        """Mean of the normalized vectors for every value with members."""
        out = {}
        for value, idx in self.partition(attribute).items():
            if idx.size == 0:
                raise EmptyGroup(f"attribute value {value!r} has no records")
            out[value] = mean_embedding(self.matrix[idx])
        return out


def build_index(table: LabeledEmbeddingTable) -> ReferenceIndex:
    return ReferenceIndex(table)


def _ranked(ids: np.ndarray, similarities: np.ndarray) -> np.ndarray:
    """Positions sorted by descending similarity, ascending id on ties."""
    return np.lexsort((ids, -similarities))


def top_n_by_attribute(
    index: ReferenceIndex, query, space: AttributeSpace, n: int
) -> RelevantSubsets:
    """The n records per attribute value most similar to the query.

    Groups smaller than n are used whole. Raises ``EmptyGroup`` when a value
    has no records at all, since equalization then has nothing to balance.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    q = normalize(query)
    partition = index.partition(space.name)
    ids = np.array(index.table.ids)
    indices: dict[str, tuple[int, ...]] = {}
    means: dict[str, Vector] = {}
    vectors: dict[str, np.ndarray] = {}
    for value in space.values:
        members = partition.get(value)
        if members is None or members.size == 0:
            raise EmptyGroup(f"attribute value {value!r} has no reference records")
        similarities = index.matrix[members] @ q
        order = _ranked(ids[members], similarities)
        chosen = members[order[: min(n, members.size)]]
        indices[value] = tuple(int(i) for i in chosen)
        vectors[value] = index.matrix[chosen].copy()
        means[value] = mean_embedding(vectors[value])
    return RelevantSubsets(indices=indices, means=means, vectors=vectors)


def retrieve_top_k(table: LabeledEmbeddingTable, query, k: int) -> list[Retrieved]:
    """The k most similar records (all of them when k exceeds the table)."""
    if k < 1:
        raise ConfigError("k must be at least 1")
    if table.count == 0:
        raise EmptyTable("cannot retrieve from an empty table")
    q = normalize(query)
    similarities = table.vectors @ q
    order = _ranked(np.array(table.ids), similarities)[: min(k, table.count)]
    results = []
    for row in order:
        row = int(row)
        results.append(
            Retrieved(
                id=table.ids[row],
                similarity=float(similarities[row]),
                labels={name: table.attributes[name][row] for name in table.spaces},
                class_label=table.classes[row],
                row=row,
            )
        )
    return results


def elbow_n(similarities: Sequence[float]) -> int:
    """Knee point of a descending similarity curve, as a 1-based count.

    Returns the number of points up to and including the one farthest from
    the chord joining the first and last points (first maximizer on ties).
    Offered as an alternative to a fixed n; off by default in the pipeline.
    """
    values = as_vector(similarities)
    count = values.shape[0]
    if count < 3:
        raise TooFewPoints("elbow detection needs at least three points")
    x = np.arange(count, dtype=np.float64)
    dx = float(x[-1] - x[0])
    dy = float(values[-1] - values[0])
    # Perpendicular distance to the chord, up to a constant factor.
    numerators = np.abs(dx * (values[0] - values) - (x[0] - x) * dy)
    # Snap float noise to zero so a strictly linear decay (degenerate chord)
    # deterministically yields the first maximizer.
    tolerance = 1e-12 * (abs(dx) * float(np.max(np.abs(values))) + dx * abs(dy))
    numerators[numerators <= tolerance] = 0.0
    return int(np.argmax(numerators)) + 1
