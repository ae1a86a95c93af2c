"""Model stand-in: extractor, classifier, pretraining, checkpoint format.

Hand-checkable cases use an identity-configured extractor so features
equal inputs; the pretraining gate is exercised on the shared default
scenario fixture.
"""

import numpy as np
import pytest

from groto.errors import DataFormatError, DegenerateInputError, DimensionError, PretrainError
from groto.model import (
    SGD,
    ModelParams,
    PretrainConfig,
    SourceSnapshot,
    accuracy,
    clone_to_target,
    compute_source_centroids,
    extract_features,
    init_model,
    load_model,
    predict,
    pretrain_source,
    save_model,
)
from groto.scenario import FeatureMatrix


def identity_params(dim, num_classes=2):
    """Extractor that passes positive inputs through unchanged."""
    eye = np.eye(dim)
    wc = np.eye(num_classes, dim)
    return ModelParams(eye.copy(), np.zeros(dim), eye.copy(), np.zeros(dim), wc)


class TestModelParams:
    def test_dimension_properties(self):
        p = init_model(5, 7, 3, 4, np.random.default_rng(0))
        assert (p.input_dim, p.hidden_dim, p.feat_dim, p.num_classes) == (5, 7, 3, 4)

    def test_copy_is_independent(self):
        p = identity_params(2)
        q = p.copy()
        q.w1[0, 0] = 99.0
        assert p.w1[0, 0] == 1.0

    def test_validate_catches_shape_mismatch(self):
        p = identity_params(3)
        p.b1 = np.zeros(2)
        with pytest.raises(DimensionError):
            p.validate()

    def test_validate_catches_nonfinite(self):
        p = identity_params(3)
        p.w2[0, 0] = np.nan
        with pytest.raises(DegenerateInputError):
            p.validate()


class TestExtractFeatures:
    def test_identity_extractor_passes_positive_inputs(self):
        p = identity_params(3)
        x = np.array([[1.0, 2.0, 3.0], [0.5, 0.1, 4.0]])
        out = extract_features(p, x)
        np.testing.assert_allclose(out.features, x, atol=1e-15)

    def test_zero_input_zero_bias_gives_zero_feature(self):
        p = identity_params(3)
        out = extract_features(p, np.zeros((1, 3)))
        np.testing.assert_array_equal(out.features, np.zeros((1, 3)))

    def test_relu_clips_negative_hidden(self):
        p = identity_params(2)
        out = extract_features(p, np.array([[-1.0, 2.0]]))
        np.testing.assert_allclose(out.features, [[0.0, 2.0]], atol=1e-15)

    def test_labels_ride_along(self):
        p = identity_params(2)
        m = FeatureMatrix([[1.0, 1.0]], [7])
        np.testing.assert_array_equal(extract_features(p, m).labels, [7])

    def test_determinism_bitwise(self, rng):
        p = init_model(4, 6, 3, 2, rng)
        x = rng.standard_normal((10, 4))
        a = extract_features(p, x).features
        b = extract_features(p, x).features
        assert a.tobytes() == b.tobytes()

    def test_dim_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            extract_features(identity_params(3), np.ones((2, 4)))


class TestPredictAccuracy:
    def test_predict_rows_are_distributions(self, rng):
        p = init_model(4, 6, 3, 5, rng)
        probs = predict(p, rng.standard_normal((8, 4)))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_accuracy_on_identity_model(self):
        # classifier rows e_0, e_1 make argmax follow the larger coordinate
        p = identity_params(2)
        data = FeatureMatrix([[3.0, 1.0], [1.0, 3.0]], [0, 1])
        assert accuracy(p, data) == 1.0

    def test_accuracy_requires_labels(self):
        with pytest.raises(DegenerateInputError):
            accuracy(identity_params(2), FeatureMatrix([[1.0, 0.0]]))


class TestCentroids:
    def test_hand_case(self):
        p = identity_params(2)
        data = FeatureMatrix([[1.0, 0.0], [3.0, 0.0], [0.0, 2.0]], [0, 0, 1])
        cents = compute_source_centroids(p, data)
        np.testing.assert_allclose(cents[0], [2.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(cents[1], [0.0, 2.0], atol=1e-15)

    def test_missing_class_rejected(self):
        p = identity_params(2)
        data = FeatureMatrix([[1.0, 0.0]], [0])
        with pytest.raises(DegenerateInputError) as e:
            compute_source_centroids(p, data)
        assert "class 1" in str(e.value)


class TestSourceSnapshot:
    def test_snapshot_arrays_are_read_only(self):
        snap = SourceSnapshot(identity_params(2), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            snap.params.w1[0, 0] = 5.0
        with pytest.raises(ValueError):
            snap.centroids[0, 0] = 5.0

    def test_snapshot_detached_from_source_arrays(self):
        p = identity_params(2)
        snap = SourceSnapshot(p, np.zeros((2, 2)))
        p.w1[0, 0] = 99.0
        assert snap.params.w1[0, 0] == 1.0

    def test_clone_to_target_is_writable_and_detached(self):
        snap = SourceSnapshot(identity_params(2), np.zeros((2, 2)))
        before = snap.params.w1.tobytes()
        clone = clone_to_target(snap)
        clone.w1 += 1.0
        assert snap.params.w1.tobytes() == before


class TestSGD:
    def test_plain_step(self):
        opt = SGD([np.zeros(2)], lr=0.5)
        (out,) = opt.step([np.array([1.0, 2.0])], [np.array([2.0, 2.0])])
        np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-15)

    def test_momentum_accumulates(self):
        opt = SGD([np.zeros(1)], lr=1.0, momentum=0.5)
        p = np.array([0.0])
        g = np.array([1.0])
        p = opt.step([p], [g])[0]  # v=1, p=-1
        p = opt.step([p], [g])[0]  # v=1.5, p=-2.5
        assert p[0] == pytest.approx(-2.5, abs=1e-15)

    def test_masked_rows_bitwise_frozen(self, rng):
        w = rng.standard_normal((4, 3))
        frozen = w[2].tobytes()
        mask = np.ones_like(w)
        mask[2] = 0.0
        opt = SGD([w], lr=0.1, momentum=0.9, weight_decay=0.01)
        cur = w
        for _ in range(10):
            cur = opt.step([cur], [rng.standard_normal(w.shape)], masks=[mask])[0]
        assert cur[2].tobytes() == frozen
        assert not np.allclose(cur[0], w[0])


class TestPretrain:
    def test_gate_reached_on_default_scenario(self, default_scenario, source_snapshot):
        assert accuracy(source_snapshot.params, default_scenario.source_test) >= 0.99

    def test_centroids_match_recomputation(self, default_scenario, source_snapshot):
        cents = compute_source_centroids(source_snapshot.params, default_scenario.source_train)
        np.testing.assert_allclose(cents, source_snapshot.centroids, atol=1e-12)

    def test_zero_epoch_cap_raises(self, default_scenario):
        with pytest.raises(PretrainError) as e:
            pretrain_source(default_scenario, PretrainConfig(max_epochs=0))
        assert e.value.best_accuracy == 0.0

    def test_unreachable_gate_reports_best(self, default_scenario):
        cfg = PretrainConfig(max_epochs=1, min_epochs=0, min_source_acc=1.1)
        with pytest.raises(PretrainError) as e:
            pretrain_source(default_scenario, cfg)
        assert 0.0 < e.value.best_accuracy <= 1.0

    def test_determinism_bitwise(self, default_scenario):
        a = pretrain_source(default_scenario, PretrainConfig(max_epochs=12, seed=1))
        b = pretrain_source(default_scenario, PretrainConfig(max_epochs=12, seed=1))
        for pa, pb in zip(a.params.param_list(), b.params.param_list()):
            assert pa.tobytes() == pb.tobytes()


class TestModelCheckpoint:
    def test_round_trip_with_centroids(self, tmp_path, rng):
        p = init_model(4, 6, 3, 5, rng)
        cents = rng.standard_normal((5, 3))
        path = tmp_path / "m.grmd"
        save_model(path, p, cents)
        back, back_cents = load_model(path)
        # storage is exact at float32 precision
        for orig, got in zip(p.param_list(), back.param_list()):
            np.testing.assert_array_equal(orig.astype(np.float32), got.astype(np.float32))
        np.testing.assert_array_equal(cents.astype(np.float32), back_cents.astype(np.float32))

    def test_round_trip_without_centroids(self, tmp_path, rng):
        p = init_model(3, 4, 2, 2, rng)
        path = tmp_path / "m.grmd"
        save_model(path, p)
        _, cents = load_model(path)
        assert cents is None

    def test_save_is_deterministic(self, tmp_path, rng):
        p = init_model(3, 4, 2, 2, rng)
        p1, p2 = tmp_path / "a.grmd", tmp_path / "b.grmd"
        save_model(p1, p)
        save_model(p2, p)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path, rng):
        path = tmp_path / "m.grmd"
        save_model(path, init_model(3, 4, 2, 2, rng))
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(DataFormatError) as e:
            load_model(path)
        assert e.value.offset == 0

    def test_truncated_block(self, tmp_path, rng):
        path = tmp_path / "m.grmd"
        save_model(path, init_model(3, 4, 2, 2, rng))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(DataFormatError):
            load_model(path)

    def test_trailing_bytes_rejected(self, tmp_path, rng):
        path = tmp_path / "m.grmd"
        save_model(path, init_model(3, 4, 2, 2, rng))
        path.write_bytes(path.read_bytes() + b"\x01")
        with pytest.raises(DataFormatError):
            load_model(path)
