import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hhe.data import (
    FeatureSet,
    SynthConfig,
    generate_synthetic,
    load_features,
    save_features,
    split_query_gallery,
    split_train_test,
)
from hhe.errors import DegenerateDataset, FormatError, InvalidConfig


class TestSynthetic:
    def test_tiny_noise_collapses_identity(self):
        cfg = SynthConfig(num_ids=3, samples_per_id=4, num_cameras=2, dim=8, sigma_id=1e-12, sigma_cam=0.0)
        ds, protos = generate_synthetic(cfg, return_prototypes=True)
        for lab in range(3):
            np.testing.assert_allclose(ds.vectors[ds.labels == lab], np.tile(protos[lab], (4, 1)), atol=1e-10)

    def test_both_cameras_per_identity(self):
        ds = generate_synthetic(SynthConfig(num_ids=2, samples_per_id=4, num_cameras=2, dim=4))
        assert len(ds) == 8
        for lab in (0, 1):
            assert sorted(set(ds.cameras[ds.labels == lab].tolist())) == [0, 1]

    def test_camera_assignment(self):
        ds = generate_synthetic(SynthConfig(num_ids=5, samples_per_id=6, num_cameras=4, dim=4))
        j = np.tile(np.arange(6), 5)
        np.testing.assert_array_equal(ds.cameras, (ds.labels + j) % 4)

    def test_seeded(self):
        a = generate_synthetic(SynthConfig(seed=7))
        assert a.equals(generate_synthetic(SynthConfig(seed=7)))
        assert not a.equals(generate_synthetic(SynthConfig(seed=8)))

    def test_nearest_prototype(self):
        ds, protos = generate_synthetic(SynthConfig(sigma_cam=0.0, seed=2), return_prototypes=True)
        pred = np.argmax(ds.vectors @ protos.T, axis=1)
        assert np.mean(pred == ds.labels) >= 0.99

    def test_scale(self):
        a = generate_synthetic(SynthConfig(scale=3.0, sigma_id=1e-9, sigma_cam=0.0, dim=16))
        np.testing.assert_allclose(np.linalg.norm(a.vectors, axis=1), 3.0, rtol=1e-6)

    @pytest.mark.parametrize(
        "kw", [{"num_ids": 1}, {"num_cameras": 1}, {"samples_per_id": 1}, {"sigma_id": 0.0}, {"sigma_cam": -1.0}]
    )
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfig):
            SynthConfig(**kw)


class TestFeatureFile:
    def test_empty(self, tmp_path):
        ds = FeatureSet([], [], [], np.empty((0, 5)))
        save_features(ds, tmp_path / "f.hhe")
        assert (tmp_path / "f.hhe").read_text() == "HHE v1 0 5\n"
        back = load_features(tmp_path / "f.hhe")
        assert len(back) == 0 and back.dim == 5

    def test_three_samples(self, tmp_path):
        ds = FeatureSet([10, 11, 12], [0, 0, 1], [1, 2, 1], [[0.1, -2.5], [1e-300, 3.0], [1 / 3, 0.0]])
        save_features(ds, tmp_path / "f.hhe")
        lines = (tmp_path / "f.hhe").read_text().splitlines()
        assert lines[0] == "HHE v1 3 2"
        assert lines[1] == "10,0,1,0.1,-2.5"
        assert load_features(tmp_path / "f.hhe").equals(ds)

    def test_malformed_row(self, tmp_path):
        (tmp_path / "f.hhe").write_text("HHE v1 2 2\n0,0,0,1.0,2.0\n1,0,1,oops,2.0\n")
        with pytest.raises(FormatError, match="line 3"):
            load_features(tmp_path / "f.hhe")

    def test_wrong_width(self, tmp_path):
        (tmp_path / "f.hhe").write_text("HHE v1 1 3\n0,0,0,1.0,2.0\n")
        with pytest.raises(FormatError, match="line 2"):
            load_features(tmp_path / "f.hhe")

    def test_bad_header(self, tmp_path):
        (tmp_path / "f.hhe").write_text("HHE v2 1 3\n")
        with pytest.raises(FormatError, match="line 1"):
            load_features(tmp_path / "f.hhe")

    def test_row_count_mismatch(self, tmp_path):
        (tmp_path / "f.hhe").write_text("HHE v1 2 1\n0,0,0,1.0\n")
        with pytest.raises(FormatError):
            load_features(tmp_path / "f.hhe")

    def test_non_finite(self, tmp_path):
        (tmp_path / "f.hhe").write_text("HHE v1 1 1\n0,0,0,nan\n")
        with pytest.raises(FormatError, match="line 2"):
            load_features(tmp_path / "f.hhe")

    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(0, 6),
        st.integers(1, 4),
        st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=24, max_size=24),
    )
    def test_round_trip(self, tmp_path_factory, n, d, pool):
        vecs = np.array(pool[: n * d]).reshape(n, d)
        ds = FeatureSet(np.arange(n), np.arange(n) % 3, np.arange(n) % 2, vecs)
        path = tmp_path_factory.mktemp("rt") / "f.hhe"
        save_features(ds, path)
        assert load_features(path).equals(ds)


def two_by_two_by_two():
    # 2 identities x 2 cameras x 2 samples
    labels = np.repeat([0, 1], 4)
    cameras = np.tile([0, 0, 1, 1], 2)
    return FeatureSet(np.arange(8), labels, cameras, np.eye(8))


def has_cross_camera_match(query, gallery):
    for q in query:
        ok = (gallery.labels == q.label) & (gallery.cameras != q.camera)
        if not ok.any():
            return False
    return True


class TestQueryGallery:
    def test_small_case(self, rng):
        query, gallery = split_query_gallery(two_by_two_by_two(), rng, 0.25)
        assert len(query) == 2
        assert sorted(query.labels.tolist()) == [0, 1]
        assert len(gallery) == 6
        assert has_cross_camera_match(query, gallery)

    def test_partition(self, rng):
        ds = generate_synthetic(SynthConfig(seed=1))
        query, gallery = split_query_gallery(ds, rng, 0.25)
        ids = np.sort(np.concatenate([query.sample_ids, gallery.sample_ids]))
        np.testing.assert_array_equal(ids, ds.sample_ids)
        assert len(query) == 32 * 5

    def test_zero_fraction(self, rng):
        with pytest.raises(DegenerateDataset):
            split_query_gallery(two_by_two_by_two(), rng, 0.0)

    def test_single_camera_identity(self, rng):
        ds = FeatureSet(np.arange(4), [0, 0, 1, 1], [0, 0, 0, 1], np.eye(4))
        with pytest.raises(DegenerateDataset):
            split_query_gallery(ds, rng, 0.5)

    def test_deterministic(self):
        ds = generate_synthetic(SynthConfig(seed=3))
        a = split_query_gallery(ds, np.random.default_rng(5), 0.25)
        b = split_query_gallery(ds, np.random.default_rng(5), 0.25)
        assert a[0].equals(b[0]) and a[1].equals(b[1])

    @pytest.mark.parametrize("seed", range(10))
    def test_cross_camera_guarantee(self, seed):
        rng = np.random.default_rng(seed)
        cfg = SynthConfig(num_ids=6, samples_per_id=int(rng.integers(2, 9)), num_cameras=int(rng.integers(2, 5)), dim=3, seed=seed)
        ds = generate_synthetic(cfg)
        query, gallery = split_query_gallery(ds, rng, float(rng.uniform(0.1, 0.9)))
        assert set(query.labels.tolist()) == set(range(6))
        assert has_cross_camera_match(query, gallery)


class TestTrainTest:
    def test_cells_split(self, rng):
        ds = generate_synthetic(SynthConfig(seed=0))
        train, test = split_train_test(ds, 0.4, rng)
        assert len(train) + len(test) == len(ds)
        assert not set(train.sample_ids.tolist()) & set(test.sample_ids.tolist())
        np.testing.assert_array_equal(train.identities(), test.identities())
        # 20 samples over 4 cameras gives 5 per cell, 2 held out from each
        assert len(test) == 32 * 4 * 2

    def test_bounds(self, rng):
        ds = two_by_two_by_two()
        train, test = split_train_test(ds, 0.0, rng)
        assert len(test) == 0 and len(train) == 8
        with pytest.raises(InvalidConfig):
            split_train_test(ds, 1.5, rng)
