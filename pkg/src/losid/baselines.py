"""Handcrafted LOS/NLOS features computed from CSI windows.

Three window statistics, each scored so that LARGER means more NLOS-like
(the evaluation pipeline negates them so that the shared "score >= alpha
implies LOS" rule applies):

skewness    population skewness of the per-packet dominant-path power
            d_p = max_m |htap_p(m)|^2, where htap is the impulse response
            recovered from the packet's CSI.  A strong stable direct path
            keeps d_p symmetric and tight; without one the maximum over
            Rayleigh taps is right-skewed.

kurtosis    raw (non-excess) kurtosis of the per-packet amplitude spread
            s_p = std_n(|H(f_n)| / mean_n |H(f_n)|).  Frequency-selective
            fading makes s_p large and heavy-tailed across a window.

phase       weighted variance over the window of the calibrated per-
            subcarrier phase, weights proportional to mean amplitude:
            rho = sum_n w_n * var_p(phi_p(n)).  Calibration unwraps the
            phase over the subcarrier order and removes a linear trend,
            which cancels timing offsets and any global rotation.

All three are invariant under a global complex scaling of the window.
Windows with (numerically) zero variance evaluate to exactly 0 by
convention.  Multiple spatial streams are combined by the median of the
per-stream values.
"""

from __future__ import annotations

import numpy as np

from .channel_sim import PacketRecord
from .dataset import DatasetMeta

# Raw features grow with NLOS-ness; multiply by this for LOS-positive scores.
LOS_SCORE_SIGN = -1.0

# A window counts as degenerate when the spread of the statistic is this
# small relative to its mean; identical repeated packets land here even
# after float round-off.
_DEGENERATE_REL = 1e-12


def _check_subcarriers(subcarriers, dft_size: int) -> np.ndarray:
    idx = np.asarray(subcarriers, dtype=int)
    half = dft_size // 2
    if idx.size == 0:
        raise ValueError("subcarrier set is empty")
    if np.any(idx < -half) or np.any(idx > half):
        raise ValueError(f"subcarrier index outside [-{half}, {half}]")
    folded = np.mod(idx, dft_size)
    if len(set(folded.tolist())) != idx.size:
        raise ValueError("subcarrier indices collide modulo dft_size")
    return folded


def recover_cir(csi, subcarriers, dft_size: int, num_taps: int | None = None) -> np.ndarray:
    """Tap magnitudes of the impulse response behind one packet's CSI.

    The |S| values are embedded at their bin indices in a length-N spectrum
    (zeros elsewhere, DC included), inverse-DFT'd, and the first num_taps
    magnitudes returned (all N by default).  Exact when the subcarriers
    cover every bin.
    """
    csi = np.asarray(csi)
    folded = _check_subcarriers(subcarriers, dft_size)
    if csi.shape[-1] != folded.size:
        raise ValueError("csi length does not match the subcarrier set")
    spectrum = np.zeros(csi.shape[:-1] + (dft_size,), dtype=np.complex128)
    spectrum[..., folded] = csi
    taps = np.fft.ifft(spectrum, axis=-1)
    if num_taps is not None:
        taps = taps[..., :num_taps]
    return np.abs(taps)


def dominant_path_powers(
    csi_matrix, subcarriers, dft_size: int, num_taps: int | None = None
) -> np.ndarray:
    """Per-packet max_m |htap(m)|^2 for a (packets, |S|) CSI matrix."""
    mags = recover_cir(np.asarray(csi_matrix, dtype=np.complex128), subcarriers, dft_size, num_taps)
    return np.max(mags * mags, axis=-1)


def _central_moments(values, orders):
    v = np.asarray(values, dtype=np.float64)
    mean = v.mean()
    d = v - mean
    return mean, [np.mean(d**k) for k in orders]


def _degenerate(mean: float, m2: float) -> bool:
    return np.sqrt(m2) <= _DEGENERATE_REL * max(abs(mean), 1e-300)


def skewness(values) -> float:
    """Population skewness m3 / m2^(3/2); exactly 0 for degenerate input."""
    mean, (m2, m3) = _central_moments(values, (2, 3))
    if _degenerate(mean, m2):
        return 0.0
    return float(m3 / m2**1.5)


def kurtosis(values) -> float:
    """Population raw kurtosis m4 / m2^2 (3 for a Gaussian); 0 if degenerate."""
    mean, (m2, m4) = _central_moments(values, (2, 4))
    if _degenerate(mean, m2):
        return 0.0
    return float(m4 / (m2 * m2))


def skewness_feature(csi_matrix, subcarriers, dft_size: int) -> float:
    """Skewness of the dominant-path power over one window, one stream."""
    return skewness(dominant_path_powers(csi_matrix, subcarriers, dft_size))


def amplitude_spread(csi_matrix) -> np.ndarray:
    """s_p = population std of the mean-normalised |H| per packet."""
    amps = np.abs(np.asarray(csi_matrix, dtype=np.complex128))
    mu = amps.mean(axis=-1, keepdims=True)
    normed = np.divide(amps, mu, out=np.zeros_like(amps), where=mu > 0)
    return normed.std(axis=-1)


def kurtosis_feature(csi_matrix) -> float:
    """Kurtosis of the amplitude spread over one window, one stream."""
    return kurtosis(amplitude_spread(csi_matrix))


def phase_calibrate(csi, subcarriers, method: str = "lstsq") -> np.ndarray:
    """Unwrapped per-subcarrier phase with a linear-in-index trend removed.

    Works on one packet (|S|,) or a stack (..., |S|).  ``method`` picks how
    the slope is estimated: "lstsq" fits the least-squares line over all
    subcarriers, "endpoint" uses only the first and last (the classical
    two-point calibration); both centre the residual.
    """
    csi = np.asarray(csi)
    n = np.asarray(subcarriers, dtype=np.float64)
    if csi.shape[-1] != n.size:
        raise ValueError("csi length does not match the subcarrier set")
    phi = np.unwrap(np.angle(csi), axis=-1)
    if method == "lstsq":
        a = np.stack([n, np.ones_like(n)], axis=1)
        coef = phi @ np.linalg.pinv(a).T        # (..., 2): slope, intercept
        trend = coef @ a.T
    elif method == "endpoint":
        slope = (phi[..., -1] - phi[..., 0]) / (n[-1] - n[0])
        trend = slope[..., None] * n
        trend = trend + (phi - trend).mean(axis=-1, keepdims=True)
    else:
        raise ValueError(f"unknown calibration method {method!r}")
    return phi - trend


def rho_factor(csi_matrix, subcarriers, method: str = "lstsq") -> float:
    """Amplitude-weighted variance of the calibrated phase over a window.

    Weights are the window-mean amplitudes per subcarrier, normalised to
    sum 1; the variance is over packets, per subcarrier.
    """
    csi = np.asarray(csi_matrix, dtype=np.complex128)
    if csi.ndim != 2:
        raise ValueError("rho_factor expects a (packets, subcarriers) matrix")
    phases = phase_calibrate(csi, subcarriers, method)
    weights = np.abs(csi).mean(axis=0)
    total = weights.sum()
    if total <= 0:
        return 0.0
    return float((weights / total) @ phases.var(axis=0))


def median_over_streams(values) -> float:
    """Median of per-stream feature values (mean of the central pair when
    the count is even)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("median over an empty stream set")
    return float(np.median(values))


FEATURE_KINDS = ("skewness", "kurtosis", "phase")


def window_scores(
    sessions: list[list[PacketRecord]],
    meta: DatasetMeta,
    feature: str,
    window_len: int,
    stride: int | None = None,
    streams=None,
):
    """Score every window of every session with one feature.

    Per-packet statistics are computed once per (session, stream) and then
    windowed.  Returns (scores, labels, rows): scores are LOS-positive
    (negated raw features), rows are (raw_value, label) pairs in the same
    order for CSV export.
    """
    if feature not in FEATURE_KINDS:
        raise ValueError(f"unknown feature {feature!r}, pick one of {FEATURE_KINDS}")
    if window_len < 1:
        raise ValueError("window_len must be at least 1")
    if stride is None:
        stride = window_len
    if stride < 1:
        raise ValueError("stride must be at least 1")
    if streams is None:
        streams = range(meta.num_streams)
    streams = list(streams)

    values, labels = [], []
    for session in sessions:
        if not session or len(session) < window_len:
            continue
        if len({r.condition for r in session}) > 1:
            raise ValueError("session mixes channel conditions")
        label = session[0].condition.los_label
        csi = np.stack([r.csi for r in session])      # (L, streams, |S|)
        starts = range(0, len(session) - window_len + 1, stride)

        if feature == "skewness":
            per_stream = [
                dominant_path_powers(csi[:, s, :], meta.subcarriers, meta.dft_size)
                for s in streams
            ]
            for start in starts:
                vals = [skewness(dp[start : start + window_len]) for dp in per_stream]
                values.append(median_over_streams(vals))
                labels.append(label)
        elif feature == "kurtosis":
            per_stream = [amplitude_spread(csi[:, s, :]) for s in streams]
            for start in starts:
                vals = [kurtosis(sp[start : start + window_len]) for sp in per_stream]
                values.append(median_over_streams(vals))
                labels.append(label)
        else:
            phases = [
                phase_calibrate(csi[:, s, :].astype(np.complex128), meta.subcarriers)
                for s in streams
            ]
            amps = [np.abs(csi[:, s, :].astype(np.complex128)) for s in streams]
            for start in starts:
                sl = slice(start, start + window_len)
                vals = []
                for phi, amp in zip(phases, amps):
                    w = amp[sl].mean(axis=0)
                    total = w.sum()
                    if total <= 0:
                        vals.append(0.0)
                    else:
                        vals.append(float((w / total) @ phi[sl].var(axis=0)))
                values.append(median_over_streams(vals))
                labels.append(label)

    values = np.asarray(values)
    labels_arr = np.asarray(labels, dtype=np.int64)
    rows = list(zip(values.tolist(), labels_arr.tolist()))
    return LOS_SCORE_SIGN * values, labels_arr, rows


def write_feature_csv(path, feature: str, rows) -> None:
    """CSV with one window per line: feature_kind,value,label."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("feature_kind,value,label\n")
        for value, label in rows:
            fh.write(f"{feature},{value!r},{label}\n")
