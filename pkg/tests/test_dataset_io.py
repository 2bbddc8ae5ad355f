import json

import numpy as np
import pytest

from setonet.benchmarks import get_card, relayout
from setonet.dataset_io import (
    GENERATOR_VERSION,
    METADATA_FILE,
    array_checksum,
    read_dataset,
    read_metadata,
    write_dataset,
)
from setonet.elastic import destandardize, load_elastic_dataset, standardize, validate_file
from setonet.errors import DatasetFormatError
from setonet.models import OperatorDataset


def _dataset(n=3, M=4, Q=5, shared=True):
    rng = np.random.default_rng(0)
    return OperatorDataset(
        locations=rng.uniform(size=(1 if shared else n, M, 1)),
        values=rng.normal(size=(n, M, 1)),
        query_points=rng.uniform(size=(1, Q, 1)),
        targets=rng.normal(size=(n, Q, 1)),
        extras={"coeffs": rng.normal(size=(n, 4))},
        metadata={"input_grid": [0.0, 0.5, 1.0]},
    )


def _metadata():
    return {"benchmark": "derivative", "card": {"name": "derivative"}, "seed": 7}


class TestDatasetIO:
    def test_write_then_read(self, tmp_path):
        checksums = write_dataset(str(tmp_path), {"test": _dataset()}, _metadata())
        assert set(checksums) == {"test"}

        meta = read_metadata(str(tmp_path))
        assert meta["generator_version"] == GENERATOR_VERSION
        assert meta["splits"]["test"]["n_samples"] == 3
        assert meta["splits"]["test"]["shared_layout"] is True

        loaded = read_dataset(str(tmp_path), "test")
        original = _dataset()
        np.testing.assert_array_equal(loaded.values, original.values)
        assert loaded.locations.shape == (1, 4, 1)
        np.testing.assert_array_equal(loaded.extras["coeffs"], original.extras["coeffs"])
        assert loaded.metadata["seed"] == 7
        assert loaded.metadata["input_grid"] == [0.0, 0.5, 1.0]

    def test_checksum_is_content_based(self):
        arrays = {"a": np.arange(4.0), "b": np.ones((2, 2))}
        assert array_checksum(arrays) == array_checksum({"b": np.ones((2, 2)), "a": np.arange(4.0)})
        assert array_checksum(arrays) != array_checksum({"a": np.arange(4.0), "b": np.ones((4,))})

    def test_same_content_same_checksum(self, tmp_path):
        first = write_dataset(str(tmp_path / "a"), {"test": _dataset()}, _metadata())
        second = write_dataset(str(tmp_path / "b"), {"test": _dataset()}, _metadata())
        assert first == second

    def test_refuses_overwrite_without_force(self, tmp_path):
        write_dataset(str(tmp_path), {"test": _dataset()}, _metadata())
        with pytest.raises(DatasetFormatError, match="输出目录已存在数据集"):
            write_dataset(str(tmp_path), {"test": _dataset()}, _metadata())
        write_dataset(str(tmp_path), {"test": _dataset(n=2)}, _metadata(), force=True)
        assert len(read_dataset(str(tmp_path), "test")) == 2

    def test_tampered_data_detected(self, tmp_path):
        write_dataset(str(tmp_path), {"test": _dataset()}, _metadata())
        path = tmp_path / "test.npz"
        with np.load(path) as bundle:
            arrays = {k: bundle[k] for k in bundle.files}
        arrays["values"] = arrays["values"] + 1.0
        np.savez(path, **arrays)
        with pytest.raises(DatasetFormatError, match="校验和不一致"):
            read_dataset(str(tmp_path), "test")
        assert len(read_dataset(str(tmp_path), "test", verify=False)) == 3

    def test_version_mismatch(self, tmp_path):
        write_dataset(str(tmp_path), {"test": _dataset()}, _metadata())
        meta_path = tmp_path / METADATA_FILE
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        meta["generator_version"] = "0.1"
        meta_path.write_text(json.dumps(meta), encoding="utf-8")
        with pytest.raises(DatasetFormatError, match="数据集版本不匹配"):
            read_metadata(str(tmp_path))

    def test_missing_metadata(self, tmp_path):
        with pytest.raises(DatasetFormatError, match="缺少元数据文件"):
            read_metadata(str(tmp_path))

    def test_missing_split(self, tmp_path):
        write_dataset(str(tmp_path), {"test": _dataset()}, _metadata())
        with pytest.raises(DatasetFormatError, match="数据集中不存在划分"):
            read_dataset(str(tmp_path), "train")


class TestElasticLoader:
    @pytest.fixture
    def elastic_file(self, tmp_path):
        rng = np.random.default_rng(1)
        path = tmp_path / "plate.npz"
        np.savez(
            path,
            train_loads=rng.normal(3.0, 2.0, size=(6, 5)),
            test_loads=rng.normal(3.0, 2.0, size=(2, 5)),
            train_displacement=rng.normal(-1.0, 0.5, size=(6, 7)),
            test_displacement=rng.normal(-1.0, 0.5, size=(2, 7)),
            edge_y=np.linspace(0, 1, 5),
            nodes=rng.uniform(size=(7, 2)),
        )
        return str(path)

    def test_load_standardizes_with_train_stats(self, elastic_file):
        splits = load_elastic_dataset(elastic_file, n_sensors=5, n_nodes=7)
        train = splits["train"]
        assert train.values.shape == (6, 5, 1)
        assert train.targets.shape == (6, 7, 1)
        assert train.locations.shape == (1, 5, 1)
        assert train.query_points.shape == (1, 7, 2)
        assert train.values.mean() == pytest.approx(0.0, abs=1e-12)
        assert train.values.std() == pytest.approx(1.0)
        stats = train.metadata["normalization"]
        assert splits["test"].metadata["normalization"] == stats

    def test_loaded_splits_support_relayout(self, elastic_file):
        splits = load_elastic_dataset(elastic_file, n_sensors=5, n_nodes=7)
        assert splits["test"].metadata["input_grid"] == pytest.approx(np.linspace(0, 1, 5).tolist())
        view = relayout(splits["test"], get_card("elastic", {"M": 5, "N_q": 7}), 3)
        np.testing.assert_allclose(view.locations[0, :, 0], [0.0, 0.5, 1.0])
        np.testing.assert_array_equal(view.values[..., 0], splits["test"].values[:, [0, 2, 4], 0])

    def test_destandardize_inverts(self, elastic_file):
        stats = {"input_mean": 3.0, "input_std": 2.0, "target_mean": -1.0, "target_std": 0.5}
        x = np.array([1.0, 5.0])
        np.testing.assert_allclose(destandardize(standardize(x, stats, "target"), stats, "target"), x)

    def test_wrong_shapes_rejected(self, elastic_file):
        ok, errors = validate_file(elastic_file)
        assert not ok
        assert any("edge_y" in e for e in errors)
        with pytest.raises(DatasetFormatError, match="edge_y"):
            load_elastic_dataset(elastic_file)

    def test_missing_arrays(self, tmp_path):
        path = tmp_path / "bad.npz"
        np.savez(path, edge_y=np.zeros(5))
        ok, errors = validate_file(str(path), 5, 7)
        assert not ok
        assert "train_loads" in errors[0]

    def test_missing_file(self, tmp_path):
        ok, errors = validate_file(str(tmp_path / "none.npz"))
        assert not ok
