"""End-to-end orchestration: query resolution, debiasing, fold evaluation.

Evaluation protocol: the target table is partitioned into seeded folds; for
each fold the retrieval pool is the target with that fold withheld, the top-k
records are retrieved from the pool, and KL / MaxSkew are computed against
the attribute prior. Worst-group AUC is scored on the held-out fold itself.
Fold values aggregate to mean, sample standard deviation, and standard error.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .augment import (
    AttributeSpace,
    augment_query,
    external_augmenter,
    generic_prompts,
    mentions_attribute,
)
from .client import EmbeddingEndpoint, embed_text
from .dataset import LabeledEmbeddingTable, make_folds
from .equalize import MODES, DebiasReport, debias
from .errors import (
    BendError,
    ConfigError,
    DegenerateGroup,
    DimensionMismatch,
    DuplicateId,
    EmptyGroup,
    MetadataError,
    MissingEndpoint,
    DatasetIOError,
)
from .metrics import empirical_distribution, kl_divergence, max_skew, worst_group_auc
from .reference_index import (
    ReferenceIndex,
    RelevantSubsets,
    build_index,
    retrieve_top_k,
    top_n_by_attribute,
)
from .reporting import SCHEMA, summary_stats
from .subspace import GENERIC_COLUMN_MODES, build_attribute_matrix, orthogonalize
from .vectors import Vector, as_vector, mean_embedding, normalize

SUBSET_RANKINGS = ("step1", "raw")


@dataclass(frozen=True)
class RunConfig:
    """Knobs shared by the debias and evaluate entry points."""

    attribute: str
    n: int = 100
    k: int = 500
    modes: tuple[str, ...] = MODES
    seed: int = 0
    fold_count: int = 5
    jobs: int = 1
    subset_by: str = "step1"
    generic_columns: str = "diff"
    embed_endpoint: EmbeddingEndpoint | None = None
    augment_endpoint: str | None = None
    prior: dict[str, float] | None = None

    def __post_init__(self):
        if not self.attribute:
            raise ConfigError("an attribute name is required")
        if self.n < 1 or self.k < 1:
            raise ConfigError("n and k must both be at least 1")
        if not self.modes:
            raise ConfigError("at least one mode is required")
        for mode in self.modes:
            if mode not in MODES:
                raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
        if self.fold_count < 1:
            raise ConfigError("fold_count must be at least 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.subset_by not in SUBSET_RANKINGS:
            raise ConfigError(f"subset_by must be one of {SUBSET_RANKINGS}")
        if self.generic_columns not in GENERIC_COLUMN_MODES:
            raise ConfigError(
                f"generic_columns must be one of {GENERIC_COLUMN_MODES}"
            )


@dataclass(frozen=True)
class QueryRow:
    id: str
    text: str | None = None
    vector: Vector | None = None
    class_label: str | None = None
    augmented: dict[str, Vector] | None = None
    generic: dict[str, Vector] | None = None


def _vector_map(obj, what: str) -> dict[str, Vector]:
    if not isinstance(obj, dict):
        raise MetadataError(f"{what} must map attribute values to vectors")
    return {str(k): as_vector(v) for k, v in obj.items()}


def parse_query_row(record: dict, lineno: int = 0) -> QueryRow:
    if not isinstance(record, dict):
        raise MetadataError(f"query line {lineno} is not a JSON object")
    schema = record.get("schema")
    if schema is not None and schema != SCHEMA:
        raise MetadataError(f"query line {lineno} has unknown schema {schema!r}")
    query_id = record.get("id")
    if not isinstance(query_id, str) or not query_id:
        raise MetadataError(f"query line {lineno} needs a string 'id'")
    text = record.get("text")
    vector = record.get("vector")
    if (text is None) == (vector is None):
        raise MetadataError(
            f"query {query_id!r} must carry exactly one of 'text' or 'vector'"
        )
    return QueryRow(
        id=query_id,
        text=text if text is None else str(text),
        vector=None if vector is None else as_vector(vector),
        class_label=record.get("class"),
        augmented=(
            _vector_map(record["augmented"], "augmented")
            if record.get("augmented") is not None
            else None
        ),
        generic=(
            _vector_map(record["generic"], "generic")
            if record.get("generic") is not None
            else None
        ),
    )


def load_queries(path: str | Path) -> list[QueryRow]:
    """Parse a queries JSONL file, rejecting duplicate ids."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetIOError(f"cannot read queries file {path}: {exc}") from None
    rows = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except ValueError:
            raise MetadataError(f"query line {lineno} is not valid JSON") from None
        row = parse_query_row(record, lineno)
        if row.id in seen:
            raise DuplicateId(f"duplicate query id {row.id!r}")
        seen.add(row.id)
        rows.append(row)
    if not rows:
        raise MetadataError(f"queries file {path} holds no queries")
    return rows


def load_prior(path: str | Path, space: AttributeSpace) -> dict[str, float]:
    path = Path(path)
    try:
        body = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetIOError(f"cannot read prior file {path}: {exc}") from None
    except ValueError:
        raise ConfigError(f"prior file {path} is not valid JSON") from None
    return validate_prior(body, space)


def validate_prior(probs, space: AttributeSpace) -> dict[str, float]:
    if not isinstance(probs, dict) or set(probs) != set(space.values):
        raise ConfigError(
            f"prior must assign a probability to every value of {space.name!r}"
        )
    out = {value: float(probs[value]) for value in space.values}
    if any(p < 0 for p in out.values()):
        raise ConfigError("prior probabilities must be non-negative")
    if abs(sum(out.values()) - 1.0) > 1e-9:
        raise ConfigError("prior probabilities must sum to 1")
    return out


@dataclass(frozen=True)
class ResolvedQuery:
    row: QueryRow
    embedding: Vector
    augmented: dict[str, Vector] | None
    generic: dict[str, Vector] | None
    augmented_texts: dict[str, str] | None = None
    augment_source: str | None = None
    skipped: bool = False
    skip_reason: str | None = None


def resolve_query(
    row: QueryRow, space: AttributeSpace, index: ReferenceIndex, cfg: RunConfig
) -> ResolvedQuery:
    """Turn a query row into an embedding plus attribute-direction inputs.

    Vector rows use their bundled augmentation vectors when present and fall
    back to reference-derived group-mean directions otherwise. Text rows are
    augmented (externally when configured, by template otherwise) and embedded
    through the endpoint; attribute-explicit text is flagged for passthrough.
    """
    dim = index.table.dim
    if row.vector is not None:
        embedding = normalize(row.vector)
        if embedding.shape[0] != dim:
            raise DimensionMismatch(
                f"query {row.id!r} has dimension {embedding.shape[0]}, dataset {dim}"
            )
        if row.augmented is not None:
            missing = set(space.values) - set(row.augmented)
            if missing:
                raise MetadataError(
                    f"query {row.id!r} augmented vectors missing {sorted(missing)}"
                )
            augmented = {v: row.augmented[v] for v in space.values}
            generic = None
            if row.generic is not None:
                missing = set(space.values) - set(row.generic)
                if missing:
                    raise MetadataError(
                        f"query {row.id!r} generic vectors missing {sorted(missing)}"
                    )
                generic = {v: row.generic[v] for v in space.values}
            return ResolvedQuery(row, embedding, augmented, generic)
        # No text and no bundled directions: estimate global attribute
        # directions from the labeled reference groups.
        means = index.group_means(space.name)
        center = mean_embedding(list(means.values()))
        augmented = {v: embedding + (means[v] - center) for v in space.values}
        generic = {v: means[v] for v in space.values}
        return ResolvedQuery(row, embedding, augmented, generic,
                             augment_source="reference-means")

    if cfg.embed_endpoint is None:
        raise MissingEndpoint(
            f"query {row.id!r} is text but no embedding endpoint is configured"
        )
    if mentions_attribute(row.text, space):
        embedding = embed_text([row.text], cfg.embed_endpoint)[0]
        return ResolvedQuery(
            row,
            embedding,
            None,
            None,
            skipped=True,
            skip_reason="query explicitly references the protected attribute",
        )
    if cfg.augment_endpoint:
        augmented_set = external_augmenter(row.text, space, cfg.augment_endpoint)
    else:
        augmented_set = augment_query(row.text, space)
    prompts = generic_prompts(space)
    batch = (
        [row.text]
        + [augmented_set.per_value_texts[v] for v in space.values]
        + [prompts[v] for v in space.values]
    )
    embedded = embed_text(batch, cfg.embed_endpoint)
    k = len(space.values)
    return ResolvedQuery(
        row,
        embedded[0],
        {v: embedded[1 + i] for i, v in enumerate(space.values)},
        {v: embedded[1 + k + i] for i, v in enumerate(space.values)},
        augmented_texts=dict(augmented_set.per_value_texts),
        augment_source=augmented_set.source,
    )


def run_query_reports(
    resolved: ResolvedQuery,
    index: ReferenceIndex,
    space: AttributeSpace,
    cfg: RunConfig,
) -> tuple[dict[str, DebiasReport], RelevantSubsets | None]:
    """Debias one resolved query under every configured mode."""
    if resolved.skipped:
        passthrough = {
            mode: DebiasReport(
                mode=mode,
                baseline=resolved.embedding,
                step1=None,
                final=resolved.embedding,
                lam=None,
                residuals=(),
                dropped_columns=0,
                distance_gap={},
                skipped=True,
                skip_reason=resolved.skip_reason,
            )
            for mode in cfg.modes
        }
        return passthrough, None
    matrix = build_attribute_matrix(
        resolved.embedding, resolved.augmented, resolved.generic, cfg.generic_columns
    )
    if cfg.subset_by == "step1":
        ranking = orthogonalize(resolved.embedding, matrix)
    else:
        ranking = resolved.embedding
    subsets = top_n_by_attribute(index, ranking, space, cfg.n)
    reports = {}
    for mode in cfg.modes:
        report = debias(resolved.embedding, matrix, subsets, mode)
        reports[mode] = replace(report, augmented_texts=resolved.augmented_texts)
    return reports, subsets


def resolve_space(
    reference: LabeledEmbeddingTable,
    attribute: str,
    target: LabeledEmbeddingTable | None = None,
) -> AttributeSpace:
    if attribute not in reference.spaces:
        raise ConfigError(f"attribute {attribute!r} is not declared in the reference")
    space = reference.spaces[attribute]
    if target is not None:
        if attribute not in target.spaces:
            raise ConfigError(f"attribute {attribute!r} is not declared in the target")
        if tuple(target.spaces[attribute].values) != tuple(space.values):
            raise ConfigError(
                f"attribute {attribute!r} has different values in reference and target"
            )
    return space


def _fold_auc(
    target: LabeledEmbeddingTable,
    fold_rows: Sequence[int],
    space: AttributeSpace,
    z: Vector,
    query_class: str | None,
) -> float | None:
    if query_class is None:
        return None
    scores = target.vectors[np.asarray(fold_rows, dtype=np.int64)] @ z
    groups: dict[str, list[tuple[float, bool]]] = {v: [] for v in space.values}
    labels = target.attributes[space.name]
    for position, row in enumerate(fold_rows):
        groups[labels[row]].append(
            (float(scores[position]), target.classes[row] == query_class)
        )
    try:
        return worst_group_auc({v: g for v, g in groups.items() if g})
    except (DegenerateGroup, EmptyGroup):
        return None


def _report_distance_gap(report: DebiasReport) -> dict:
    if report.skipped:
        return {"baseline": None, "step1": None, "final": None}
    return dict(report.distance_gap)


def _mode_entry(
    report: DebiasReport,
    pools: Sequence[tuple[LabeledEmbeddingTable, list[int]]],
    target: LabeledEmbeddingTable,
    space: AttributeSpace,
    prior: dict[str, float],
    cfg: RunConfig,
    query_class: str | None,
) -> dict:
    folds_out = []
    kls, skews, aucs = [], [], []
    for fold_idx, (pool, fold_rows) in enumerate(pools):
        retrieved = retrieve_top_k(pool, report.final, cfg.k)
        labels = [r.labels[space.name] for r in retrieved]
        distribution = empirical_distribution(labels, space)
        kl = kl_divergence(distribution, prior)
        skew = max_skew(distribution, prior)
        auc = _fold_auc(target, fold_rows, space, report.final, query_class)
        counts = {v: 0 for v in space.values}
        for label in labels:
            counts[label] += 1
        entry = {
            "fold": fold_idx,
            "pool_size": pool.count,
            "retrieved": len(retrieved),
            "retrieved_counts": counts,
            "kl": kl,
            "max_skew": skew,
            "worst_group_auc": auc,
        }
        if cfg.k > pool.count:
            entry["warning"] = "k exceeds pool size; retrieved the whole pool"
        folds_out.append(entry)
        kls.append(kl)
        skews.append(skew)
        if auc is not None:
            aucs.append(auc)
    return {
        "distance_gap": _report_distance_gap(report),
        "lambda": report.lam,
        "max_equalization_residual": (
            max(report.residuals) if report.residuals else None
        ),
        "dropped_columns": report.dropped_columns,
        "folds": folds_out,
        "kl": summary_stats(kls),
        "max_skew": summary_stats(skews),
        "worst_group_auc": summary_stats(aucs) if aucs else None,
    }


def evaluate(
    queries: Sequence[QueryRow],
    reference: LabeledEmbeddingTable,
    target: LabeledEmbeddingTable,
    cfg: RunConfig,
    source_info: dict | None = None,
) -> dict:
    """Run every configured mode over every query and aggregate fold metrics.

    Per-query failures become error entries rather than aborting the run.
    The returned dict is ready for deterministic serialization.
    """
    if reference.dim != target.dim:
        raise DimensionMismatch(
            f"reference dimension {reference.dim} differs from target {target.dim}"
        )
    space = resolve_space(reference, cfg.attribute, target)
    index = build_index(reference)
    folds = make_folds(target.count, cfg.fold_count, cfg.seed)
    pools = []
    for fold in folds:
        mask = np.ones(target.count, dtype=bool)
        mask[fold] = False
        pools.append((target.subset(np.flatnonzero(mask)), fold))
    if cfg.prior is not None:
        prior = validate_prior(cfg.prior, space)
    else:
        prior = empirical_distribution(target.attributes[space.name], space)

    def work(row: QueryRow) -> dict:
        try:
            resolved = resolve_query(row, space, index, cfg)
            reports, subsets = run_query_reports(resolved, index, space, cfg)
            entry = {
                "id": row.id,
                "class": row.class_label,
                "skipped": resolved.skipped,
                "skip_reason": resolved.skip_reason,
                "n_used": subsets.n_used if subsets is not None else None,
                "modes": {
                    mode: _mode_entry(
                        reports[mode], pools, target, space, prior, cfg,
                        row.class_label,
                    )
                    for mode in cfg.modes
                },
            }
            return entry
        except BendError as exc:
            return {"id": row.id, "error": f"{type(exc).__name__}: {exc}"}

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as executor:
            entries = list(executor.map(work, queries))
    else:
        entries = [work(row) for row in queries]

    aggregates = {}
    for mode in cfg.modes:
        kls, skews, aucs = [], [], []
        used = 0
        for entry in entries:
            if "error" in entry or entry.get("skipped"):
                continue
            used += 1
            mode_entry = entry["modes"][mode]
            for fold in mode_entry["folds"]:
                kls.append(fold["kl"])
                skews.append(fold["max_skew"])
                if fold["worst_group_auc"] is not None:
                    aucs.append(fold["worst_group_auc"])
        aggregates[mode] = {
            "query_count": used,
            "kl": summary_stats(kls) if kls else None,
            "max_skew": summary_stats(skews) if skews else None,
            "worst_group_auc": summary_stats(aucs) if aucs else None,
        }

    config_echo = {
        "attribute": cfg.attribute,
        "n": cfg.n,
        "k": cfg.k,
        "modes": list(cfg.modes),
        "seed": cfg.seed,
        "fold_count": cfg.fold_count,
        "jobs": cfg.jobs,
        "subset_by": cfg.subset_by,
        "generic_columns": cfg.generic_columns,
        "log_base": "e",
    }
    if source_info:
        config_echo.update(source_info)
    return {
        "schema": SCHEMA,
        "kind": "evaluation",
        "config": config_echo,
        "prior": prior,
        "fold_sizes": [len(f) for f in folds],
        "queries": entries,
        "aggregates": aggregates,
    }


def aggregate_csv_lines(report: dict) -> list[str]:
    """CSV mirror of the aggregate table: one row per mode."""
    header = (
        "mode,query_count,kl_mean,kl_std,kl_stderr,"
        "max_skew_mean,max_skew_std,max_skew_stderr,"
        "worst_group_auc_mean,worst_group_auc_std,worst_group_auc_stderr"
    )
    lines = [header]
    for mode, agg in report["aggregates"].items():
        cells = [mode, str(agg["query_count"])]
        for metric in ("kl", "max_skew", "worst_group_auc"):
            stats = agg[metric]
            if stats is None:
                cells.extend(["", "", ""])
            else:
                cells.extend(
                    format(stats[key], ".17g") for key in ("mean", "std", "stderr")
                )
        lines.append(",".join(cells))
    return lines


def debias_report_json(
    resolved: ResolvedQuery,
    reports: dict[str, DebiasReport],
    subsets: RelevantSubsets | None,
    index: ReferenceIndex,
    space: AttributeSpace,
    cfg: RunConfig,
) -> dict:
    """Assemble the full JSON body for one debiased query."""
    subset_ids = None
    if subsets is not None:
        subset_ids = {
            value: [index.table.ids[i] for i in subsets.indices[value]]
            for value in space.values
        }
    modes_out = {}
    for mode, report in reports.items():
        modes_out[mode] = {
            "baseline": report.baseline,
            "step1": report.step1,
            "final": report.final,
            "lambda": report.lam,
            "residuals": list(report.residuals),
            "dropped_columns": report.dropped_columns,
            "distance_gap": _report_distance_gap(report),
        }
    return {
        "schema": SCHEMA,
        "kind": "debias",
        "attribute": space.name,
        "query": {
            "id": resolved.row.id,
            "text": resolved.row.text,
            "class": resolved.row.class_label,
        },
        "skipped": resolved.skipped,
        "skip_reason": resolved.skip_reason,
        "augment_source": resolved.augment_source,
        "augmented_texts": resolved.augmented_texts,
        "n": cfg.n,
        "subset_by": cfg.subset_by,
        "generic_columns": cfg.generic_columns,
        "n_used": subsets.n_used if subsets is not None else None,
        "subset_ids": subset_ids,
        "modes": modes_out,
    }


def retrieval_report_json(
    table: LabeledEmbeddingTable,
    retrieved,
    k: int,
    metric_space: AttributeSpace | None = None,
    prior: dict[str, float] | None = None,
) -> dict:
    """Assemble the JSON body for one retrieval run."""
    warnings = []
    if k > table.count:
        warnings.append("k exceeds the target size; returned every record")
    counts = {
        name: {value: 0 for value in space.values}
        for name, space in table.spaces.items()
    }
    for record in retrieved:
        for name in table.spaces:
            counts[name][record.labels[name]] += 1
    distributions = {
        name: empirical_distribution(
            [r.labels[name] for r in retrieved], table.spaces[name]
        )
        for name in table.spaces
    }
    metrics = None
    if prior is not None and metric_space is not None:
        distribution = distributions[metric_space.name]
        metrics = {
            "kl": kl_divergence(distribution, prior),
            "max_skew": max_skew(distribution, prior),
        }
    return {
        "schema": SCHEMA,
        "kind": "retrieval",
        "k": k,
        "returned": len(retrieved),
        "warnings": warnings,
        "counts": counts,
        "distributions": distributions,
        "metrics": metrics,
        "prior": prior,
        "results": [
            {
                "id": r.id,
                "similarity": r.similarity,
                "labels": r.labels,
                "class": r.class_label,
            }
            for r in retrieved
        ],
    }
