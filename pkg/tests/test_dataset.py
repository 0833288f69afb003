"""Dataset layer tests: vector packing, windowing, splits, serialisation."""

import json

import numpy as np
import pytest

from losid.channel_sim import ChannelCondition, PacketRecord, SimConfig, simulate_session
from losid.dataset import (
    DatasetMeta,
    NormalizationStats,
    SequenceSample,
    build_input_vector,
    export_jsonl,
    largest_remainder_counts,
    read_dataset,
    split,
    split_input_vector,
    stacked,
    window_sequences,
    write_dataset,
)
from losid.errors import ConfigError, DatasetFormatError


def _record(rssi=30, streams=2, tones=3, seed=0, condition=ChannelCondition.LOS):
    rng = np.random.default_rng(seed)
    csi = (rng.standard_normal((streams, tones)) + 1j * rng.standard_normal((streams, tones)))
    return PacketRecord(0, condition, rssi, csi.astype(np.complex64))


def _session(n, condition=ChannelCondition.LOS, seed=0):
    return simulate_session(SimConfig(), condition, n, seed=seed)


def _samples(n_sessions, per_session, label, sid0=0):
    out = []
    for k in range(n_sessions):
        for i in range(per_session):
            out.append(SequenceSample(
                x=np.full((2, 3), float(sid0 + k)), label=label,
                session_id=sid0 + k, start=i, stream=0))
    return out


# ---------------------------------------------------------------- vectors

def test_input_vector_layout():
    rec = _record(rssi=37)
    vec = build_input_vector(rec, stream=1, include_rssi=True)
    assert vec.shape == (7,)   # 1 + 2*3
    assert vec.dtype == np.float64
    assert vec[0] == 37.0
    np.testing.assert_allclose(vec[1::2], rec.csi[1].real, atol=1e-7)
    np.testing.assert_allclose(vec[2::2], rec.csi[1].imag, atol=1e-7)


def test_input_vector_without_rssi():
    rec = _record()
    vec = build_input_vector(rec, stream=0, include_rssi=False)
    assert vec.shape == (6,)
    np.testing.assert_allclose(vec[0::2], rec.csi[0].real, atol=1e-7)


def test_input_vector_default_dimension_is_113():
    rec = simulate_session(SimConfig(), ChannelCondition.LOS, 1, seed=0)[0]
    assert build_input_vector(rec).shape == (113,)
    assert build_input_vector(rec, include_rssi=False).shape == (112,)


def test_split_input_vector_round_trip():
    rec = _record(rssi=12)
    vec = build_input_vector(rec, stream=0)
    rssi, csi = split_input_vector(vec)
    assert rssi == 12.0
    np.testing.assert_allclose(csi, rec.csi[0], atol=1e-7)
    csi_only = split_input_vector(build_input_vector(rec, include_rssi=False), include_rssi=False)
    assert csi_only[0] is None
    np.testing.assert_allclose(csi_only[1], rec.csi[0], atol=1e-7)


# ---------------------------------------------------------------- windowing

def test_window_counts_and_leftover_drop():
    records = _session(105)
    wins = window_sequences(records, window_len=10)
    assert len(wins) == 10
    assert [w.start for w in wins] == list(range(0, 100, 10))
    assert all(w.x.shape == (10, 113) for w in wins)
    assert all(w.label == 1 for w in wins)


def test_window_stride_one():
    records = _session(105)
    wins = window_sequences(records, window_len=10, stride=1)
    assert len(wins) == 96   # 105 - 10 + 1


def test_window_shorter_than_p_gives_nothing():
    assert window_sequences(_session(5), window_len=10) == []


def test_window_rejects_mixed_conditions():
    mixed = _session(3) + _session(3, ChannelCondition.NLOS_BODY, seed=1)
    with pytest.raises(ValueError):
        window_sequences(mixed, window_len=2)


def test_window_argument_validation():
    records = _session(10)
    with pytest.raises(ConfigError):
        window_sequences(records, window_len=0)
    with pytest.raises(ConfigError):
        window_sequences(records, window_len=2, stride=0)


def test_window_values_match_source_packets():
    records = _session(20)
    wins = window_sequences(records, window_len=5, stream=2, session_id=9)
    w = wins[1]
    assert w.session_id == 9 and w.stream == 2 and w.start == 5
    np.testing.assert_allclose(
        w.x[0], build_input_vector(records[5], stream=2), atol=0)


# ---------------------------------------------------------------- splitting

def test_largest_remainder_counts():
    assert largest_remainder_counts(100, (0.70, 0.15, 0.15)) == [70, 15, 15]
    # floors (7,1,1) leave one unit for the tied 0.5 remainders; the
    # earlier slot wins ties
    assert largest_remainder_counts(10, (0.70, 0.15, 0.15)) == [7, 2, 1]
    assert largest_remainder_counts(7, (0.5, 0.25, 0.25)) == [3, 2, 2]
    assert sum(largest_remainder_counts(1, (0.70, 0.15, 0.15))) == 1


def test_split_counts_without_sessions():
    samples = [SequenceSample(np.zeros((1, 2)), i % 2, None, i, 0) for i in range(100)]
    sp = split(samples, seed=0)
    assert (len(sp.train), len(sp.validation), len(sp.test)) == (70, 15, 15)
    # a partition: nothing lost, nothing duplicated
    seen = {id(s) for s in sp.train + sp.validation + sp.test}
    assert len(seen) == 100


def test_split_is_deterministic():
    samples = [SequenceSample(np.zeros((1, 2)), i % 2, None, i, 0) for i in range(50)]
    a = split(samples, seed=3)
    b = split(samples, seed=3)
    c = split(samples, seed=4)
    assert [s.start for s in a.train] == [s.start for s in b.train]
    assert [s.start for s in a.train] != [s.start for s in c.train]


def test_split_needs_three_samples():
    with pytest.raises(ValueError):
        split([SequenceSample(np.zeros((1, 2)), 0, None, 0, 0)] * 2)


def test_split_ratio_validation():
    samples = [SequenceSample(np.zeros((1, 2)), i % 2, None, i, 0) for i in range(10)]
    with pytest.raises(ConfigError):
        split(samples, ratios=(0.5, 0.5))
    with pytest.raises(ConfigError):
        split(samples, ratios=(0.8, 0.3, -0.1))


def test_session_split_never_splits_a_session():
    samples = _samples(6, 10, 1) + _samples(12, 10, 0, sid0=100)
    sp = split(samples, seed=1)
    parts = {}
    for name, part in (("tr", sp.train), ("va", sp.validation), ("te", sp.test)):
        for s in part:
            assert parts.setdefault(s.session_id, name) == name


def test_session_split_keeps_both_labels_everywhere():
    # Regression guard: few sessions of the rarer label must still reach
    # every split instead of piling into train.
    samples = _samples(4, 30, 1) + _samples(12, 30, 0, sid0=50)
    for seed in range(10):
        sp = split(samples, seed=seed)
        for part in (sp.train, sp.validation, sp.test):
            labels = {s.label for s in part}
            assert labels == {0, 1}


def test_session_split_tracks_ratios():
    samples = _samples(40, 10, 1) + _samples(40, 10, 0, sid0=200)
    sp = split(samples, seed=0)
    assert len(sp.train) / 800 == pytest.approx(0.70, abs=0.05)
    assert len(sp.validation) / 800 == pytest.approx(0.15, abs=0.05)
    assert len(sp.test) / 800 == pytest.approx(0.15, abs=0.05)


# ---------------------------------------------------------------- normalisation

def test_normalization_zero_mean_unit_std():
    rng = np.random.default_rng(0)
    samples = [
        SequenceSample(rng.normal(5.0, 3.0, (4, 6)), 0, None, i, 0) for i in range(50)
    ]
    stats = NormalizationStats.fit(samples)
    z = np.concatenate([stats.apply(s.x) for s in samples], axis=0)
    np.testing.assert_allclose(np.mean(z, axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(np.std(z, axis=0), 1.0, atol=1e-9)


def test_normalization_constant_dimension_maps_to_zero():
    samples = [SequenceSample(np.full((3, 2), 7.0), 0, None, i, 0) for i in range(4)]
    stats = NormalizationStats.fit(samples)
    assert stats.std[0] == 1e-6   # floored, no division blow-up
    np.testing.assert_allclose(stats.apply(samples[0].x), 0.0, atol=1e-12)


def test_normalization_invert_round_trip():
    rng = np.random.default_rng(1)
    samples = [SequenceSample(rng.normal(size=(4, 5)), 1, None, i, 0) for i in range(8)]
    stats = NormalizationStats.fit(samples)
    x = samples[0].x
    np.testing.assert_allclose(stats.invert(stats.apply(x)), x, atol=1e-12)


def test_stacked_shapes_and_labels():
    samples = _samples(2, 3, 1) + _samples(1, 3, 0, sid0=10)
    x, y = stacked(samples)
    assert x.shape == (9, 2, 3)
    assert y.shape == (9,)
    assert y.tolist() == [1] * 6 + [0] * 3


# ---------------------------------------------------------------- serialisation

def _roundtrip(tmp_path, sessions, meta):
    path = tmp_path / "d.csid"
    write_dataset(path, sessions, meta)
    return path, *read_dataset(path)


def test_dataset_round_trip(tmp_path):
    cfg = SimConfig()
    sessions = [
        _session(7, ChannelCondition.LOS, seed=0),
        _session(5, ChannelCondition.NLOS_STRUCTURE, seed=1),
        _session(3, ChannelCondition.NLOS_BODY, seed=2),
    ]
    meta = DatasetMeta(cfg.subcarriers, cfg.dft_size, cfg.num_streams)
    _, got_sessions, got_meta = _roundtrip(tmp_path, sessions, meta)
    assert got_meta == meta
    assert [len(s) for s in got_sessions] == [7, 5, 3]
    for orig, got in zip(sessions, got_sessions):
        for a, b in zip(orig, got):
            assert a.equals(b)
            assert b.csi.dtype == np.complex64


def test_dataset_header_is_self_describing(tmp_path):
    cfg = SimConfig()
    sessions = [_session(2)]
    meta = DatasetMeta(cfg.subcarriers, cfg.dft_size, cfg.num_streams)
    path = tmp_path / "d.csid"
    write_dataset(path, sessions, meta)
    raw = path.read_bytes()
    assert raw[:4] == b"CSID"
    hlen = int.from_bytes(raw[4:8], "little")
    header = json.loads(raw[8 : 8 + hlen])
    assert header["format"] == "csi-dataset"
    assert header["version"] == 1
    assert header["session_lengths"] == [2]
    assert header["dft_size"] == 64


def test_dataset_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.csid"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(DatasetFormatError):
        read_dataset(path)


def test_dataset_rejects_truncation(tmp_path):
    cfg = SimConfig()
    sessions = [_session(4)]
    path = tmp_path / "d.csid"
    write_dataset(path, sessions, DatasetMeta(cfg.subcarriers, cfg.dft_size, cfg.num_streams))
    raw = path.read_bytes()
    clipped = tmp_path / "clipped.csid"
    clipped.write_bytes(raw[:-7])
    with pytest.raises(DatasetFormatError):
        read_dataset(clipped)


def test_dataset_rejects_future_version(tmp_path):
    cfg = SimConfig()
    path = tmp_path / "d.csid"
    write_dataset(path, [_session(1)], DatasetMeta(cfg.subcarriers, cfg.dft_size, cfg.num_streams))
    raw = bytearray(path.read_bytes())
    hlen = int.from_bytes(raw[4:8], "little")
    header = json.loads(raw[8 : 8 + hlen])
    header["version"] = 99
    blob = json.dumps(header, separators=(",", ":"), sort_keys=True).encode()
    patched = tmp_path / "v99.csid"
    patched.write_bytes(raw[:4] + len(blob).to_bytes(4, "little") + blob + raw[8 + hlen :])
    with pytest.raises(DatasetFormatError):
        read_dataset(patched)


def test_dataset_write_validates_shapes(tmp_path):
    cfg = SimConfig()
    rec = _session(1)[0]
    bad = PacketRecord(0, rec.condition, rec.rssi, rec.csi[:, :10])
    meta = DatasetMeta(cfg.subcarriers, cfg.dft_size, cfg.num_streams)
    with pytest.raises(ValueError):
        write_dataset(tmp_path / "x.csid", [[bad]], meta)


def test_export_jsonl(tmp_path):
    sessions = [_session(3), _session(2, ChannelCondition.NLOS_BODY, seed=1)]
    path = tmp_path / "d.jsonl"
    export_jsonl(path, sessions)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 5
    first = json.loads(lines[0])
    assert first["condition"] == "LOS"
    assert isinstance(first["rssi"], int)
