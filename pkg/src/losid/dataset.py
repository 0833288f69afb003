"""Dataset assembly and storage.

Turns simulated packet records into fixed-length training sequences and
persists record sessions in a compact binary container.

Input vector layout (one packet, one spatial stream):

    [RSSI, Re H(f_n1), Im H(f_n1), Re H(f_n2), Im H(f_n2), ...]

over the subcarrier order of the dataset, so the dimension is
1 + 2*|S| (113 for the default 56 subcarriers), or 2*|S| when RSSI is
excluded.

File container: magic b"CSID", a u32 little-endian header length, a UTF-8
JSON header (format, version, dft_size, subcarriers, num_streams,
session_lengths), then fixed-size records:

    u32 sequence_number | u8 condition | u16 rssi |
    num_streams * |S| float32 (re, im) pairs

Everything is little-endian.  Records are concatenated session by session;
session boundaries live in the header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .channel_sim import ChannelCondition, PacketRecord
from .errors import ConfigError, DatasetFormatError

MAGIC = b"CSID"
FORMAT_NAME = "csi-dataset"
FORMAT_VERSION = 1


def build_input_vector(record: PacketRecord, stream: int = 0, include_rssi: bool = True) -> np.ndarray:
    """Flatten one packet's CSI (plus optionally RSSI) into a float64 vector."""
    csi = record.csi[stream]
    parts = np.column_stack((csi.real, csi.imag)).ravel().astype(np.float64)
    if not include_rssi:
        return parts
    return np.concatenate(([float(record.rssi)], parts))


def split_input_vector(vec: np.ndarray, include_rssi: bool = True):
    """Inverse of build_input_vector: (rssi or None, complex CSI vector)."""
    vec = np.asarray(vec, dtype=np.float64)
    if include_rssi:
        rssi, rest = vec[0], vec[1:]
    else:
        rssi, rest = None, vec
    if rest.size % 2:
        raise ValueError("CSI part of the vector has odd length")
    pairs = rest.reshape(-1, 2)
    return rssi, pairs[:, 0] + 1j * pairs[:, 1]


@dataclass(eq=False)
class SequenceSample:
    """A window of consecutive input vectors with its binary LOS label."""

    x: np.ndarray               # (window_len, dim) float64
    label: int                  # 1 = LOS, 0 = NLOS
    session_id: int | None = None
    start: int = 0
    stream: int = 0


def window_sequences(
    records: list[PacketRecord],
    window_len: int,
    stride: int | None = None,
    stream: int = 0,
    include_rssi: bool = True,
    session_id: int | None = None,
) -> list[SequenceSample]:
    """Cut one session into non-straddling windows of window_len packets.

    The default stride equals window_len (non-overlapping windows); leftover
    packets at the end of the session are dropped.
    """
    if window_len < 1:
        raise ConfigError("window_len must be at least 1")
    if stride is None:
        stride = window_len
    if stride < 1:
        raise ConfigError("stride must be at least 1")
    conditions = {r.condition for r in records}
    if len(conditions) > 1:
        raise ValueError("window_sequences expects records of a single condition")
    if len(records) < window_len:
        return []
    label = records[0].condition.los_label
    mat = np.stack([build_input_vector(r, stream, include_rssi) for r in records])
    samples = []
    for start in range(0, len(records) - window_len + 1, stride):
        samples.append(
            SequenceSample(
                x=mat[start : start + window_len].copy(),
                label=label,
                session_id=session_id,
                start=start,
                stream=stream,
            )
        )
    return samples


@dataclass
class NormalizationStats:
    """Per-dimension z-score statistics, fitted on the training split only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, samples: list[SequenceSample], floor: float = 1e-6) -> "NormalizationStats":
        if not samples:
            raise ValueError("cannot fit normalization stats on an empty split")
        stacked = np.concatenate([s.x for s in samples], axis=0)
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        return cls(mean=mean, std=np.maximum(std, floor))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


def normalize(sample: SequenceSample, stats: NormalizationStats) -> SequenceSample:
    return SequenceSample(
        x=stats.apply(sample.x),
        label=sample.label,
        session_id=sample.session_id,
        start=sample.start,
        stream=sample.stream,
    )


def denormalize(sample: SequenceSample, stats: NormalizationStats) -> SequenceSample:
    return SequenceSample(
        x=stats.invert(sample.x),
        label=sample.label,
        session_id=sample.session_id,
        start=sample.start,
        stream=sample.stream,
    )


@dataclass
class DatasetSplit:
    train: list[SequenceSample]
    validation: list[SequenceSample]
    test: list[SequenceSample]
    stats: NormalizationStats


def largest_remainder_counts(total: int, ratios) -> list[int]:
    """Integer allocation of ``total`` by ratio; remainders go to the largest
    fractional parts, ties broken toward the earlier entry."""
    exact = [total * r for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def _check_ratios(ratios) -> None:
    if len(ratios) != 3:
        raise ConfigError("ratios must have exactly three entries")
    if any(r <= 0 for r in ratios):
        raise ConfigError("all split ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("split ratios must sum to 1")


def split(
    samples: list[SequenceSample],
    ratios=(0.70, 0.15, 0.15),
    seed=0,
    by_session: bool = True,
) -> DatasetSplit:
    """Seeded train/validation/test partition with z-score stats from train.

    When samples carry session ids (and at least three sessions exist),
    whole sessions are assigned to splits so that temporally correlated
    windows never straddle a split boundary.  Sessions of each label are
    shuffled, one is planted in every split whenever the label has at
    least three sessions, and the rest are dealt greedily against the
    per-label target counts, so the realised proportions track the ratios
    up to session granularity while no split is starved of a class.
    Without session ids the samples themselves are shuffled and cut by
    largest-remainder counts.
    """
    _check_ratios(ratios)
    n = len(samples)
    if n < 3:
        raise ValueError("need at least 3 samples to split")
    rng = np.random.default_rng(seed)

    session_ids = [s.session_id for s in samples]
    groupable = by_session and all(sid is not None for sid in session_ids)
    if groupable and len(set(session_ids)) >= 3:
        parts = _split_by_session(samples, ratios, rng)
    else:
        perm = rng.permutation(n)
        counts = largest_remainder_counts(n, ratios)
        bounds = np.cumsum(counts)
        parts = (
            [samples[i] for i in perm[: bounds[0]]],
            [samples[i] for i in perm[bounds[0] : bounds[1]]],
            [samples[i] for i in perm[bounds[1] :]],
        )
    train, validation, test = parts
    stats = NormalizationStats.fit(train)
    return DatasetSplit(train=train, validation=validation, test=test, stats=stats)


def _split_by_session(samples, ratios, rng):
    # Group by session (one label per session), then stratify by label so
    # every split sees both classes even with few sessions.
    order: list[int] = []
    groups: dict[int, list[SequenceSample]] = {}
    for s in samples:
        if s.session_id not in groups:
            groups[s.session_id] = []
            order.append(s.session_id)
        groups[s.session_id].append(s)
    for sid in order:
        if len({s.label for s in groups[sid]}) > 1:
            raise ValueError(f"session {sid} mixes labels; cannot split by session")

    parts = ([], [], [])
    for label in (1, 0):
        sids = [sid for sid in order if groups[sid][0].label == label]
        if not sids:
            continue
        total = sum(len(groups[sid]) for sid in sids)
        deficits = [total * r for r in ratios]
        shuffled = [sids[j] for j in rng.permutation(len(sids))]
        # With three or more sessions of a label, guarantee every split one
        # of them (test and validation first, they starve most easily);
        # the remainder chases the per-label sample targets greedily.
        rest = shuffled
        if len(shuffled) >= 3:
            for k, sid in zip((2, 1, 0), shuffled[:3]):
                parts[k].extend(groups[sid])
                deficits[k] -= len(groups[sid])
            rest = shuffled[3:]
        for sid in rest:
            k = max(range(3), key=lambda i: deficits[i])
            parts[k].extend(groups[sid])
            deficits[k] -= len(groups[sid])
    return parts


def stacked(samples: list[SequenceSample]):
    """Stack a sample list into (n, window_len, dim) X and (n,) label arrays."""
    if not samples:
        dim = 0
        return np.zeros((0, 0, dim)), np.zeros(0, dtype=np.int64)
    x = np.stack([s.x for s in samples])
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y


@dataclass
class DatasetMeta:
    """Container-level facts a reader needs to interpret the records."""

    subcarriers: tuple[int, ...]
    dft_size: int
    num_streams: int


def _record_dtype(meta: DatasetMeta) -> np.dtype:
    return np.dtype(
        [
            ("seq", "<u4"),
            ("cond", "u1"),
            ("rssi", "<u2"),
            ("csi", "<f4", (meta.num_streams, len(meta.subcarriers), 2)),
        ]
    )


def write_dataset(path, sessions: list[list[PacketRecord]], meta: DatasetMeta) -> None:
    """Write sessions of packet records; same input bytes out every time."""
    n_sub = len(meta.subcarriers)
    total = sum(len(s) for s in sessions)
    arr = np.empty(total, dtype=_record_dtype(meta))
    i = 0
    for session in sessions:
        for r in session:
            if r.csi.shape != (meta.num_streams, n_sub):
                raise ValueError(
                    f"record {r.sequence_number}: csi shape {r.csi.shape} does not "
                    f"match ({meta.num_streams}, {n_sub})"
                )
            if not np.all(np.isfinite(r.csi)):
                raise ValueError(f"record {r.sequence_number}: non-finite CSI")
            if not 0 <= r.rssi <= 0xFFFF:
                raise ValueError(f"record {r.sequence_number}: rssi {r.rssi} out of u16 range")
            arr[i]["seq"] = r.sequence_number
            arr[i]["cond"] = int(r.condition)
            arr[i]["rssi"] = r.rssi
            csi64 = np.ascontiguousarray(r.csi, dtype=np.complex64)
            arr[i]["csi"] = csi64.view(np.float32).reshape(meta.num_streams, n_sub, 2)
            i += 1

    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dft_size": meta.dft_size,
        "subcarriers": list(meta.subcarriers),
        "num_streams": meta.num_streams,
        "session_lengths": [len(s) for s in sessions],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        fh.write(arr.tobytes())


def read_dataset(path):
    """Read a dataset container; returns (sessions, meta).

    Raises DatasetFormatError on wrong magic, malformed header, or a byte
    count that does not line up with whole records.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {blob[:4]!r}, not a dataset file")
    if len(blob) < 8:
        raise DatasetFormatError(f"{path}: truncated before header")
    header_len = int(np.frombuffer(blob[4:8], dtype="<u4")[0])
    if len(blob) < 8 + header_len:
        raise DatasetFormatError(f"{path}: truncated inside header")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"{path}: header is not valid JSON ({exc})") from exc
    if header.get("format") != FORMAT_NAME or header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}: unsupported format/version "
            f"{header.get('format')!r}/{header.get('version')!r}"
        )
    try:
        meta = DatasetMeta(
            subcarriers=tuple(int(n) for n in header["subcarriers"]),
            dft_size=int(header["dft_size"]),
            num_streams=int(header["num_streams"]),
        )
        session_lengths = [int(k) for k in header["session_lengths"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{path}: header missing or bad field ({exc})") from exc

    body = blob[8 + header_len :]
    dtype = _record_dtype(meta)
    n_complete, leftover = divmod(len(body), dtype.itemsize)
    if leftover:
        raise DatasetFormatError(
            f"{path}: truncated record data, last complete record is #{n_complete - 1}"
        )
    if n_complete != sum(session_lengths):
        raise DatasetFormatError(
            f"{path}: header promises {sum(session_lengths)} records, file holds {n_complete}"
        )
    arr = np.frombuffer(body, dtype=dtype)

    try:
        conditions = [ChannelCondition(int(c)) for c in arr["cond"]]
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: unknown condition code ({exc})") from exc
    pairs = np.ascontiguousarray(arr["csi"])
    csi = pairs.view(np.complex64)[..., 0]

    sessions = []
    pos = 0
    for length in session_lengths:
        session = [
            PacketRecord(
                sequence_number=int(arr["seq"][pos + j]),
                condition=conditions[pos + j],
                rssi=int(arr["rssi"][pos + j]),
                csi=csi[pos + j].copy(),
            )
            for j in range(length)
        ]
        sessions.append(session)
        pos += length
    return sessions, meta


def export_jsonl(path, sessions_or_samples) -> None:
    """Line-delimited JSON debug dump of record sessions or sequence samples."""
    with open(path, "w", encoding="utf-8") as fh:
        items = sessions_or_samples
        if items and isinstance(items[0], SequenceSample):
            for s in items:
                fh.write(
                    json.dumps(
                        {
                            "label": s.label,
                            "session_id": s.session_id,
                            "start": s.start,
                            "stream": s.stream,
                            "x": s.x.tolist(),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
            return
        for sid, session in enumerate(items):
            for r in session:
                fh.write(
                    json.dumps(
                        {
                            "session": sid,
                            "sequence_number": r.sequence_number,
                            "condition": r.condition.name,
                            "rssi": r.rssi,
                            "csi": [
                                [[float(c.real), float(c.imag)] for c in stream]
                                for stream in r.csi
                            ],
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
