"""Scenario generation and feature file formats.

Covers the data invariants (disjoint session subsets, margin rule,
determinism), the partition rules, and byte-level error reporting for
both file formats.
"""

import numpy as np
import pytest

from groto.errors import ConfigError, DataFormatError, DimensionError
from groto.scenario import (
    FeatureMatrix,
    Scenario,
    ScenarioConfig,
    SessionDataset,
    generate_scenario,
    load_feature_csv,
    load_feature_file,
    load_features,
    partition_sessions,
    save_feature_csv,
    save_feature_file,
)


class TestFeatureMatrix:
    def test_basic_shape_and_len(self):
        m = FeatureMatrix(np.ones((3, 2)), [0, 1, 0])
        assert len(m) == 3 and m.dim == 2

    def test_subset_carries_labels(self):
        m = FeatureMatrix(np.arange(8.0).reshape(4, 2), [0, 1, 2, 3])
        s = m.subset([2, 0])
        np.testing.assert_array_equal(s.labels, [2, 0])
        np.testing.assert_array_equal(s.features, [[4.0, 5.0], [0.0, 1.0]])

    def test_concat_preserves_order(self):
        a = FeatureMatrix([[1.0]], [0])
        b = FeatureMatrix([[2.0]], [1])
        c = FeatureMatrix.concat([a, b])
        np.testing.assert_array_equal(c.features[:, 0], [1.0, 2.0])
        np.testing.assert_array_equal(c.labels, [0, 1])

    def test_concat_drops_labels_when_any_part_unlabeled(self):
        a = FeatureMatrix([[1.0]], [0])
        b = FeatureMatrix([[2.0]])
        assert FeatureMatrix.concat([a, b]).labels is None

    def test_empty_rejected(self):
        with pytest.raises(DimensionError):
            FeatureMatrix(np.empty((0, 4)))

    def test_label_count_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            FeatureMatrix(np.ones((3, 2)), [0, 1])


class TestSessionDataset:
    def test_session_index_starts_at_one(self):
        with pytest.raises(ConfigError):
            SessionDataset(0, FeatureMatrix([[1.0]], [0]), frozenset({0}))

    def test_labels_must_lie_in_subset(self):
        with pytest.raises(ConfigError):
            SessionDataset(1, FeatureMatrix([[1.0]], [5]), frozenset({0, 1}))


class TestPartitionSessions:
    def test_index_order_blocks(self):
        parts = partition_sessions([0, 1, 2, 3, 4, 5], 2)
        assert parts == [frozenset({0, 1}), frozenset({2, 3}), frozenset({4, 5})]

    def test_remainder_dropped(self):
        parts = partition_sessions(range(7), 3)
        assert parts == [frozenset({0, 1, 2}), frozenset({3, 4, 5})]

    def test_random_order_is_seeded(self):
        a = partition_sessions(range(9), 3, order="random", seed=5)
        b = partition_sessions(range(9), 3, order="random", seed=5)
        assert a == b
        union = set().union(*a)
        assert union <= set(range(9)) and len(union) == 9

    def test_gamma_larger_than_classes_rejected(self):
        with pytest.raises(ConfigError):
            partition_sessions([0, 1], 3)

    def test_unknown_order_rejected(self):
        with pytest.raises(ConfigError):
            partition_sessions(range(4), 2, order="sideways")


class TestScenarioConfigValidate:
    def test_default_is_valid(self):
        ScenarioConfig().validate()

    @pytest.mark.parametrize(
        "field,value",
        [
            ("gamma", 0),
            ("session_count", 0),
            ("K", 5),
            ("input_dim", 0),
            ("samples_per_class", 1),
            ("cluster_spread", 0.0),
            ("domain_shift_strength", 0.0),
        ],
    )
    def test_invalid_field_rejected(self, field, value):
        cfg = ScenarioConfig()
        setattr(cfg, field, value)
        with pytest.raises(ConfigError):
            cfg.validate()


class TestGenerateScenario:
    def test_shapes_and_split(self, default_scenario):
        s = default_scenario
        assert s.K == 12 and s.input_dim == 16
        assert len(s.source_train) == 12 * 40
        assert len(s.source_test) == 12 * 10
        assert len(s.target_sessions) == 3
        for sess, test in zip(s.target_sessions, s.target_test_per_session):
            assert len(sess.inputs) == 4 * 40
            assert len(test) == 4 * 10
            assert set(test.labels) == set(sess.class_subset)

    def test_sessions_disjoint_and_ordered(self, default_scenario):
        subsets = [s.class_subset for s in default_scenario.target_sessions]
        assert subsets == [frozenset({0, 1, 2, 3}), frozenset({4, 5, 6, 7}), frozenset({8, 9, 10, 11})]

    def test_determinism_bitwise(self):
        a = generate_scenario(ScenarioConfig(seed=3))
        b = generate_scenario(ScenarioConfig(seed=3))
        assert a.source_train.features.tobytes() == b.source_train.features.tobytes()
        for sa, sb in zip(a.target_sessions, b.target_sessions):
            assert sa.inputs.features.tobytes() == sb.inputs.features.tobytes()

    def test_seed_changes_data(self):
        a = generate_scenario(ScenarioConfig(seed=0))
        b = generate_scenario(ScenarioConfig(seed=1))
        assert a.source_train.features.tobytes() != b.source_train.features.tobytes()

    def test_margin_rule_separation(self, default_scenario):
        # class means sit >= 8 sigma apart; empirical means estimate them
        # to ~sigma/sqrt(40), so 7 sigma is a safe floor
        train = default_scenario.source_train
        means = np.stack(
            [train.features[train.labels == c].mean(axis=0) for c in range(12)]
        )
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        assert dist.min() > 7.0

    def test_orthogonal_mean_directions(self, default_scenario):
        # K <= input_dim places means on a rotated orthonormal frame;
        # empirical means carry ~0.11 estimation noise, far below the
        # ~0.6 cosines random directions can reach
        train = default_scenario.source_train
        means = np.stack(
            [train.features[train.labels == c].mean(axis=0) for c in range(12)]
        )
        unit = means / np.linalg.norm(means, axis=1, keepdims=True)
        gram = unit @ unit.T
        np.fill_diagonal(gram, 0.0)
        assert np.abs(gram).max() < 0.25

    def test_shift_moves_target_but_preserves_scale(self, default_scenario):
        # the affine part is a rotation: cluster norms are preserved, yet
        # the shifted cluster means move away from the source means
        s = default_scenario
        train = s.source_train
        sess = s.target_sessions[0]
        for c in sorted(sess.class_subset):
            src = train.features[train.labels == c]
            tgt = sess.inputs.features[sess.inputs.labels == c]
            src_norm = np.linalg.norm(src.mean(axis=0))
            tgt_norm = np.linalg.norm(tgt.mean(axis=0))
            assert tgt_norm == pytest.approx(src_norm, rel=0.15)
            assert np.linalg.norm(src.mean(axis=0) - tgt.mean(axis=0)) > 0.5

    def test_scenario_invariants_enforced(self):
        bad = FeatureMatrix([[1.0]], [0])
        with pytest.raises(ConfigError):
            Scenario(
                K=2,
                input_dim=1,
                source_train=bad,
                source_test=bad,
                target_sessions=[
                    SessionDataset(1, FeatureMatrix([[1.0]], [0]), frozenset({0})),
                    SessionDataset(2, FeatureMatrix([[1.0]], [0]), frozenset({0})),
                ],
                target_test_per_session=[bad, bad],
                seed=0,
            )

    def test_negative_classes_when_sessions_do_not_cover(self):
        scen = generate_scenario(ScenarioConfig(K=14, seed=0))
        assert scen.negative_classes == [12, 13]
        assert scen.session_classes == list(range(12))


class TestFeatureFileFormat:
    def test_round_trip_labeled(self, tmp_path, rng):
        m = FeatureMatrix(rng.standard_normal((7, 3)), rng.integers(0, 5, size=7))
        p = tmp_path / "x.grft"
        save_feature_file(p, m)
        back = load_feature_file(p)
        np.testing.assert_allclose(back.features, m.features, atol=1e-6)
        np.testing.assert_array_equal(back.labels, m.labels)

    def test_round_trip_unlabeled(self, tmp_path, rng):
        m = FeatureMatrix(rng.standard_normal((4, 2)))
        p = tmp_path / "x.grft"
        save_feature_file(p, m)
        assert load_feature_file(p).labels is None

    def test_save_is_deterministic(self, tmp_path, rng):
        m = FeatureMatrix(rng.standard_normal((5, 4)), rng.integers(0, 3, size=5))
        p1, p2 = tmp_path / "a.grft", tmp_path / "b.grft"
        save_feature_file(p1, m)
        save_feature_file(p2, m)
        assert p1.read_bytes() == p2.read_bytes()

    def _valid_bytes(self, tmp_path):
        p = tmp_path / "v.grft"
        save_feature_file(p, FeatureMatrix([[1.0, 2.0]], [3]))
        return bytearray(p.read_bytes())

    def test_bad_magic_offset_zero(self, tmp_path):
        blob = self._valid_bytes(tmp_path)
        blob[:4] = b"NOPE"
        p = tmp_path / "bad.grft"
        p.write_bytes(bytes(blob))
        with pytest.raises(DataFormatError) as e:
            load_feature_file(p)
        assert e.value.offset == 0

    def test_bad_version_offset_four(self, tmp_path):
        blob = self._valid_bytes(tmp_path)
        blob[4:8] = (99).to_bytes(4, "little")
        p = tmp_path / "bad.grft"
        p.write_bytes(bytes(blob))
        with pytest.raises(DataFormatError) as e:
            load_feature_file(p)
        assert e.value.offset == 4

    def test_zero_rows_offset_eight(self, tmp_path):
        blob = self._valid_bytes(tmp_path)
        blob[8:12] = (0).to_bytes(4, "little")
        p = tmp_path / "bad.grft"
        p.write_bytes(bytes(blob))
        with pytest.raises(DataFormatError) as e:
            load_feature_file(p)
        assert e.value.offset == 8

    def test_bad_flag_offset_sixteen(self, tmp_path):
        blob = self._valid_bytes(tmp_path)
        blob[16] = 7
        p = tmp_path / "bad.grft"
        p.write_bytes(bytes(blob))
        with pytest.raises(DataFormatError) as e:
            load_feature_file(p)
        assert e.value.offset == 16

    def test_truncated_payload(self, tmp_path):
        blob = self._valid_bytes(tmp_path)
        p = tmp_path / "bad.grft"
        p.write_bytes(bytes(blob[:-6]))
        with pytest.raises(DataFormatError):
            load_feature_file(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        blob = self._valid_bytes(tmp_path)
        p = tmp_path / "bad.grft"
        p.write_bytes(bytes(blob) + b"\x00")
        with pytest.raises(DataFormatError) as e:
            load_feature_file(p)
        assert e.value.offset == len(blob)

    def test_short_header(self, tmp_path):
        p = tmp_path / "bad.grft"
        p.write_bytes(b"GR")
        with pytest.raises(DataFormatError):
            load_feature_file(p)


class TestFeatureCsv:
    def test_round_trip_labeled(self, tmp_path, rng):
        m = FeatureMatrix(rng.standard_normal((6, 3)), rng.integers(0, 4, size=6))
        p = tmp_path / "x.csv"
        save_feature_csv(p, m)
        back = load_feature_csv(p)
        np.testing.assert_allclose(back.features, m.features, atol=0)
        np.testing.assert_array_equal(back.labels, m.labels)

    def test_round_trip_unlabeled(self, tmp_path):
        m = FeatureMatrix([[1.5, -2.0], [0.25, 3.0]])
        p = tmp_path / "x.csv"
        save_feature_csv(p, m)
        back = load_feature_csv(p)
        assert back.labels is None
        np.testing.assert_allclose(back.features, m.features, atol=0)

    def test_bad_header_rejected(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("2,weird\n1.0,2.0,0\n")
        with pytest.raises(DataFormatError):
            load_feature_csv(p)

    def test_column_error_names_line(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("2,label\n1.0,2.0,0\n1.0,3\n")
        with pytest.raises(DataFormatError) as e:
            load_feature_csv(p)
        assert "line 3" in str(e.value)

    def test_non_numeric_value_names_line(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("1\nok\n")
        with pytest.raises(DataFormatError) as e:
            load_feature_csv(p)
        assert "line 2" in str(e.value)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("")
        with pytest.raises(DataFormatError):
            load_feature_csv(p)

    def test_no_data_rows(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("3\n")
        with pytest.raises(DataFormatError):
            load_feature_csv(p)

    def test_dispatch_by_suffix(self, tmp_path):
        m = FeatureMatrix([[1.0, 2.0]], [0])
        save_feature_csv(tmp_path / "a.csv", m)
        save_feature_file(tmp_path / "a.grft", m)
        assert load_features(tmp_path / "a.csv").dim == 2
        assert load_features(tmp_path / "a.grft").dim == 2
