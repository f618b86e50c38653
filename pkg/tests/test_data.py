import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurocomm.data import (
    DataFormatError,
    LabeledSpikeSet,
    SyntheticSpec,
    class_prototypes,
    decode_spkt,
    encode_spkt,
    federated_split,
    frames_to_spikes,
    generate_synthetic,
    load_csv_raster,
    load_spkt,
    save_csv_raster,
    save_spkt,
    to_fl_target,
)
from neurocomm.readout import rate_decode
from neurocomm.seeding import make_rng
from neurocomm.snn import ConfigurationError

# 3 channels x 3 steps, label 1: bits 101 000 111, MSB first, zero padded
HAND_BLOB = b"SPKT" + struct.pack("<III", 3, 3, 1) + bytes([1, 0b10100011, 0b10000000])
HAND_RASTER = np.array([[1, 0, 1], [0, 0, 0], [1, 1, 1]])


@st.composite
def spike_sets(draw, labelled=True):
    n = draw(st.integers(0, 6))
    d = draw(st.integers(1, 9))
    horizon = draw(st.integers(1, 11))
    classes = draw(st.integers(1, 5))
    seed = draw(st.integers(0, 2**32))
    rng = make_rng(seed)
    rasters = (rng.random((n, d, horizon)) < 0.4).astype(np.uint8)
    labels = rng.integers(0, classes, n) if labelled else None
    return LabeledSpikeSet(rasters, labels, classes)


class TestSPKT:
    def test_hand_encoded_file(self):
        data = decode_spkt(HAND_BLOB)
        np.testing.assert_array_equal(data.rasters[0], HAND_RASTER)
        np.testing.assert_array_equal(data.labels, [1])
        assert encode_spkt(LabeledSpikeSet(HAND_RASTER[None], [1])) == HAND_BLOB

    def test_unlabelled_records(self):
        blob = b"SPKT" + struct.pack("<III", 3, 3, 1) + bytes([0b10100011, 0b10000000])
        data = decode_spkt(blob)
        assert data.labels is None
        np.testing.assert_array_equal(data.rasters[0], HAND_RASTER)

    @settings(max_examples=50, deadline=None)
    @given(spike_sets(), st.booleans())
    def test_round_trip(self, data, drop_labels):
        if drop_labels:
            data = LabeledSpikeSet(data.rasters, None, data.class_count)
        back = decode_spkt(encode_spkt(data), data.class_count)
        np.testing.assert_array_equal(back.rasters, data.rasters)
        if data.labels is None or len(data) == 0:
            assert back.labels is None or back.labels.size == 0
        else:
            np.testing.assert_array_equal(back.labels, data.labels)

    def test_file_round_trip(self, tmp_path):
        data = generate_synthetic(SyntheticSpec(d_o=10, horizon=7, count=9, seed=4))
        save_spkt(data, tmp_path / "a.spkt")
        back = load_spkt(tmp_path / "a.spkt", 2)
        np.testing.assert_array_equal(back.rasters, data.rasters)
        np.testing.assert_array_equal(back.labels, data.labels)

    def test_empty(self):
        data = decode_spkt(b"SPKT" + struct.pack("<III", 5, 4, 0))
        assert len(data) == 0 and data.d_o == 5 and data.horizon == 4

    def test_bad_magic(self):
        with pytest.raises(DataFormatError) as err:
            decode_spkt(b"SPKX" + HAND_BLOB[4:])
        assert err.value.offset == 0
        assert "offset 0" in str(err.value)

    def test_truncated(self):
        short = HAND_BLOB[:-2]
        with pytest.raises(DataFormatError) as err:
            decode_spkt(short)
        assert err.value.offset == len(short)

    def test_missing_one_byte_per_record_reads_unlabelled(self):
        # optional labels: n fewer bytes is a valid unlabelled file
        assert decode_spkt(HAND_BLOB[:-1]).labels is None

    def test_short_header(self):
        with pytest.raises(DataFormatError):
            decode_spkt(b"SPKT\x01")

    def test_label_not_below_class_count(self):
        with pytest.raises(DataFormatError) as err:
            decode_spkt(HAND_BLOB, class_count=1)
        assert err.value.offset == 16

    def test_inferred_class_count(self):
        assert decode_spkt(HAND_BLOB).class_count == 2


class TestCSVRaster:
    def test_round_trip(self, tmp_path):
        save_csv_raster(HAND_RASTER, tmp_path / "r.csv")
        np.testing.assert_array_equal(load_csv_raster(tmp_path / "r.csv"), HAND_RASTER)

    def test_hand_written_fixture(self, tmp_path):
        (tmp_path / "f.csv").write_text("# fixture\n1,0,1\n0,0,0\n1,1,1\n")
        np.testing.assert_array_equal(load_csv_raster(tmp_path / "f.csv"), HAND_RASTER)


class TestLabeledSpikeSet:
    def test_rejects_non_binary(self):
        with pytest.raises(ConfigurationError):
            LabeledSpikeSet(np.full((1, 2, 2), 2), [0])

    def test_rejects_large_label(self):
        with pytest.raises(ConfigurationError):
            LabeledSpikeSet(np.zeros((1, 2, 2)), [2], class_count=2)

    def test_frames_layout(self):
        frames = np.zeros((1, 80, 26, 26), dtype=np.uint8)
        frames[0, 5, 2, 3] = 1
        data = frames_to_spikes(frames, [0])
        assert (data.d_o, data.horizon) == (676, 80)
        assert data.rasters[0, 2 * 26 + 3, 5] == 1 and data.rasters.sum() == 1


class TestSynthetic:
    def test_deterministic(self):
        spec = SyntheticSpec(count=20, seed=3)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        np.testing.assert_array_equal(a.rasters, b.rasters)
        np.testing.assert_array_equal(a.labels, b.labels)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 60), st.integers(1, 5), st.integers(0, 1000))
    def test_class_balance(self, count, classes, seed):
        data = generate_synthetic(SyntheticSpec(d_o=4, horizon=3, count=count, class_count=classes, seed=seed))
        sizes = np.bincount(data.labels, minlength=classes)
        assert sizes.max() - sizes.min() <= 1

    def test_noise_free_support_is_prototype(self):
        spec = SyntheticSpec(d_o=32, horizon=50, count=40, seed=5, noise_flip=0.0, background_rate=0.0)
        data = generate_synthetic(spec)
        protos = class_prototypes(spec)
        for c in range(2):
            support = data.rasters[data.labels == c].any(axis=2)
            assert np.all(support <= protos[c])
            np.testing.assert_array_equal(support.any(axis=0), protos[c])

    def test_prototype_overlap(self):
        d_o, density, draws = 64, 0.2, 10**4
        overlap = np.mean(
            [np.mean(np.logical_and(*class_prototypes(SyntheticSpec(d_o=d_o, seed=s)))) for s in range(draws)]
        )
        se = np.sqrt(density**2 * (1 - density**2) / (d_o * draws))
        assert abs(overlap - density**2) < 3 * se

    def test_full_scale_shape(self):
        data = generate_synthetic(SyntheticSpec(d_o=676, horizon=80, count=2))
        assert data.rasters.shape == (2, 676, 80)

    def test_disjoint_ranges_differ(self):
        spec = SyntheticSpec(count=10)
        assert not np.array_equal(generate_synthetic(spec).rasters, generate_synthetic(spec, start=10).rasters)

    @pytest.mark.parametrize("field", ["pattern_density", "noise_flip", "active_rate", "background_rate"])
    def test_invalid_probability(self, field):
        with pytest.raises(ConfigurationError):
            generate_synthetic(SyntheticSpec(**{field: 1.5}))


class TestFederatedSplit:
    def test_one_class_per_device(self):
        data = generate_synthetic(SyntheticSpec(count=21))
        parts = federated_split(data, {0: 0, 1: 1})
        assert len(parts) == 2 and len(parts[0]) + len(parts[1]) == 21
        assert np.all(parts[0].labels == 0) and np.all(parts[1].labels == 1)

    def test_single_device(self):
        data = generate_synthetic(SyntheticSpec(count=9))
        (only,) = federated_split(data, {0: 0, 1: 0})
        np.testing.assert_array_equal(only.rasters, data.rasters)

    def test_unassigned_class(self):
        with pytest.raises(ConfigurationError):
            federated_split(generate_synthetic(SyntheticSpec(count=4, class_count=3)), {0: 0, 1: 1})

    @settings(max_examples=40, deadline=None)
    @given(spike_sets(), st.integers(1, 4), st.integers(0, 2**32))
    def test_partition(self, data, n_dev, seed):
        owner = make_rng(seed).integers(0, n_dev, data.class_count)
        parts = federated_split(data, {c: int(owner[c]) for c in range(data.class_count)})
        assert sum(len(p) for p in parts) == len(data)
        for dev, part in enumerate(parts):
            assert np.all(owner[part.labels] == dev)
        # every example lands exactly once: compare sorted multisets of (label, bytes)
        keys = sorted((int(l), r.tobytes()) for p in parts for r, l in zip(p.rasters, p.labels))
        assert keys == sorted((int(l), r.tobytes()) for r, l in zip(data.rasters, data.labels))


class TestFLTarget:
    def test_one_hot_extremes(self, rng):
        t = to_fl_target((np.zeros((3, 6)), 1), 2, rng, high_rate=1.0, low_rate=0.0)
        np.testing.assert_array_equal(t, [[0] * 6, [1] * 6])

    def test_deterministic(self):
        ex = (np.zeros((3, 30)), 0)
        np.testing.assert_array_equal(to_fl_target(ex, 2, make_rng(1)), to_fl_target(ex, 2, make_rng(1)))

    def test_decodes_to_label(self, rng):
        for label in range(3):
            assert rate_decode(to_fl_target((np.zeros((3, 80)), label), 3, rng)) == label

    def test_label_out_of_range(self, rng):
        with pytest.raises(ConfigurationError):
            to_fl_target((np.zeros((3, 6)), 2), 2, rng)
