import json
import math

import numpy as np
import pytest

from bend.augment import GENDER
from bend.dataset import (
    LabeledEmbeddingTable,
    MANIFEST_NAME,
    SplitSpec,
    SynthCell,
    SynthQuerySpec,
    SynthSpec,
    load_synth_spec,
    make_folds,
    read_dataset,
    split_reference_target,
    synth_generate,
    synth_query_rows,
    write_dataset,
)
from bend.errors import (
    ConfigError,
    DatasetIOError,
    EmptyTable,
    ManifestError,
    MetadataError,
    SizeMismatch,
    SynthSpecError,
    TooSmall,
    UnknownLabel,
)
from bend.metrics import empirical_distribution, max_skew
from bend.reference_index import retrieve_top_k
from bend.vectors import normalize


def small_table(rng, count=12, dim=4):
    vectors = rng.standard_normal((count, dim))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    labels = tuple("male" if i % 2 == 0 else "female" for i in range(count))
    return LabeledEmbeddingTable(
        vectors=vectors,
        ids=tuple(f"r{i:04d}" for i in range(count)),
        attributes={"gender": labels},
        classes=tuple(None for _ in range(count)),
        spaces={"gender": GENDER},
    )


def synth_spec(**overrides):
    base = dict(
        dim=16,
        seed=11,
        noise=0.05,
        space=GENDER,
        cells=(
            SynthCell("c0", "male", 0.8, 40),
            SynthCell("c0", "female", -0.8, 40),
        ),
    )
    base.update(overrides)
    return SynthSpec(**base)


class TestTableValidation:
    def test_duplicate_ids_rejected(self, rng):
        vectors = rng.standard_normal((2, 4))
        with pytest.raises(MetadataError):
            LabeledEmbeddingTable(
                vectors=vectors,
                ids=("a", "a"),
                attributes={"gender": ("male", "female")},
                classes=(None, None),
                spaces={"gender": GENDER},
            )

    def test_unknown_label_rejected(self, rng):
        with pytest.raises(UnknownLabel):
            LabeledEmbeddingTable(
                vectors=rng.standard_normal((2, 4)),
                ids=("a", "b"),
                attributes={"gender": ("male", "robot")},
                classes=(None, None),
                spaces={"gender": GENDER},
            )

    def test_empty_rejected(self):
        with pytest.raises(EmptyTable):
            LabeledEmbeddingTable(
                vectors=np.empty((0, 4)),
                ids=(),
                attributes={"gender": ()},
                classes=(),
                spaces={"gender": GENDER},
            )


class TestRoundTrip:
    def test_read_write_identity(self, rng, tmp_path):
        table = small_table(rng, count=25)
        write_dataset(table, tmp_path / "ds")
        back = read_dataset(tmp_path / "ds" / MANIFEST_NAME)
        assert back.ids == table.ids
        assert back.attributes == table.attributes
        assert back.classes == table.classes
        assert back.spaces["gender"].generic_prompts == GENDER.generic_prompts
        # float32 storage: componentwise within the quantization bound
        assert np.allclose(back.vectors, table.vectors, rtol=1.2e-7, atol=1.2e-7)

    def test_refuses_nonempty_dir_without_force(self, rng, tmp_path):
        table = small_table(rng)
        write_dataset(table, tmp_path / "ds")
        with pytest.raises(DatasetIOError):
            write_dataset(table, tmp_path / "ds")
        write_dataset(table, tmp_path / "ds", force=True)

    def test_size_mismatch_detected(self, rng, tmp_path):
        table = small_table(rng)
        write_dataset(table, tmp_path / "ds")
        vec_path = tmp_path / "ds" / "vectors.f32"
        vec_path.write_bytes(vec_path.read_bytes()[:-1])
        with pytest.raises(SizeMismatch):
            read_dataset(tmp_path / "ds" / MANIFEST_NAME)

    def test_missing_attribute_line_detected(self, rng, tmp_path):
        table = small_table(rng)
        write_dataset(table, tmp_path / "ds")
        meta_path = tmp_path / "ds" / "meta.jsonl"
        lines = meta_path.read_text().splitlines()
        first = json.loads(lines[0])
        del first["attributes"]["gender"]
        lines[0] = json.dumps(first)
        meta_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(MetadataError):
            read_dataset(tmp_path / "ds" / MANIFEST_NAME)

    def test_malformed_manifest(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{not json")
        with pytest.raises(ManifestError):
            read_dataset(path)


class TestSplit:
    def test_shapes_and_fold_sizes(self, rng):
        table = small_table(rng, count=100)
        reference, target, folds = split_reference_target(
            table, SplitSpec(reference_fraction=0.5, fold_count=5, seed=3)
        )
        assert reference.count == 50
        assert target.count == 50
        assert [len(f) for f in folds] == [10] * 5

    def test_deterministic_under_seed(self, rng):
        table = small_table(rng, count=60)
        first = split_reference_target(table, SplitSpec(seed=9))
        second = split_reference_target(table, SplitSpec(seed=9))
        assert first[0].ids == second[0].ids
        assert first[1].ids == second[1].ids
        assert first[2] == second[2]
        different = split_reference_target(table, SplitSpec(seed=10))
        assert different[0].ids != first[0].ids

    def test_disjoint_and_exhaustive(self, rng):
        table = small_table(rng, count=31)
        reference, target, folds = split_reference_target(table, SplitSpec(seed=2))
        assert set(reference.ids).isdisjoint(target.ids)
        assert set(reference.ids) | set(target.ids) == set(table.ids)
        seen = [i for fold in folds for i in fold]
        assert sorted(seen) == list(range(target.count))
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1

    def test_too_small_rejected(self, rng):
        table = small_table(rng, count=9)
        with pytest.raises(TooSmall):
            split_reference_target(table, SplitSpec(fold_count=5))

    def test_bad_fraction_rejected(self):
        with pytest.raises(ConfigError):
            SplitSpec(reference_fraction=1.0)

    def test_make_folds_partition(self):
        folds = make_folds(23, 5, seed=1)
        flat = sorted(i for fold in folds for i in fold)
        assert flat == list(range(23))
        assert make_folds(23, 5, seed=1) == folds


class TestSynthGenerate:
    def test_deterministic_under_seed(self):
        first = synth_generate(synth_spec())
        second = synth_generate(synth_spec())
        assert np.array_equal(first.vectors, second.vectors)
        assert first.ids == second.ids

    def test_counts_and_labels(self):
        table = synth_generate(synth_spec())
        assert table.count == 80
        dist = empirical_distribution(table.attributes["gender"], GENDER)
        assert dist == {"male": 0.5, "female": 0.5}
        assert set(table.classes) == {"c0"}

    def test_single_record_cell(self):
        spec = synth_spec(
            cells=(SynthCell("c0", "male", 0.5, 1), SynthCell("c0", "female", -0.5, 3))
        )
        table = synth_generate(spec)
        assert table.count == 4
        assert table.attributes["gender"].count("male") == 1

    def test_unbiased_cells_have_equal_mean_similarity(self):
        spec = synth_spec(
            noise=0.3,
            cells=(SynthCell("c0", "male", 0.0, 400), SynthCell("c0", "female", 0.0, 400)),
        )
        table = synth_generate(spec)
        labels = np.array(table.attributes["gender"])
        # compare mean similarity to the overall class direction proxy
        center = normalize(table.vectors.mean(axis=0))
        male = table.vectors[labels == "male"] @ center
        female = table.vectors[labels == "female"] @ center
        pooled = math.hypot(male.std() / math.sqrt(male.size),
                            female.std() / math.sqrt(female.size))
        assert abs(male.mean() - female.mean()) < 3.0 * pooled

    def test_biased_query_retrieves_aligned_group(self):
        spec = synth_spec(
            cells=(SynthCell("c0", "male", 0.8, 500), SynthCell("c0", "female", -0.8, 500)),
            queries=(SynthQuerySpec("q", "c0", "male"),),
        )
        table = synth_generate(spec)
        query = np.array(synth_query_rows(spec)[0]["vector"])
        retrieved = retrieve_top_k(table, query, 500)
        labels = [r.labels["gender"] for r in retrieved]
        dist = empirical_distribution(labels, GENDER)
        assert dist["male"] > 0.9

    def test_bias_monotonically_raises_max_skew(self):
        skews = []
        for beta in (0.0, 0.4, 0.8):
            spec = synth_spec(
                noise=0.6,
                seed=5,
                cells=(
                    SynthCell("c0", "male", beta, 500),
                    SynthCell("c0", "female", -beta, 500),
                ),
                queries=(SynthQuerySpec("q", "c0", "male"),),
            )
            table = synth_generate(spec)
            query = np.array(synth_query_rows(spec)[0]["vector"])
            retrieved = retrieve_top_k(table, query, 500)
            dist = empirical_distribution(
                [r.labels["gender"] for r in retrieved], GENDER
            )
            skews.append(max_skew(dist, {"male": 0.5, "female": 0.5}))
        assert skews[0] < skews[1] < skews[2]

    def test_query_rows_deterministic_and_shaped(self):
        spec = synth_spec(
            queries=(SynthQuerySpec("q", "c0", "male", aug_noise=0.1),),
        )
        rows = synth_query_rows(spec)
        again = synth_query_rows(spec)
        assert rows == again
        row = rows[0]
        assert set(row["augmented"]) == {"male", "female"}
        assert set(row["generic"]) == {"male", "female"}
        assert len(row["vector"]) == spec.dim

    def test_bad_cells_rejected(self):
        with pytest.raises(SynthSpecError):
            synth_spec(cells=(SynthCell("c0", "robot", 0.1, 5),))
        with pytest.raises(SynthSpecError):
            synth_spec(cells=(SynthCell("c0", "male", 0.1, 0),))
        with pytest.raises(SynthSpecError):
            synth_spec(noise=-0.1)


class TestLoadSynthSpec:
    def test_round_trip_from_json(self, tmp_path):
        body = {
            "dim": 8,
            "seed": 3,
            "noise": 0.1,
            "attribute": {"name": "gender", "values": ["male", "female"]},
            "cells": [
                {"class": "c0", "value": "male", "bias": 0.5, "count": 4},
                {"class": "c0", "value": "female", "bias": -0.5, "count": 4},
            ],
            "queries": [{"id": "q", "class": "c0", "align": "male"}],
        }
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(body))
        spec = load_synth_spec(path)
        assert spec.dim == 8
        assert spec.queries[0].align_value == "male"
        table = synth_generate(spec)
        assert table.count == 8

    def test_malformed_json_rejected(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text("{oops")
        with pytest.raises(SynthSpecError):
            load_synth_spec(path)

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(DatasetIOError):
            load_synth_spec(tmp_path / "absent.json")
