"""Synthetic OFDM channel-state-information (CSI) generator.

Physical model
--------------
A WLAN link is simulated as a tapped-delay-line channel with M taps spaced
at the sample interval T_s.  The frequency response seen by subcarrier n
(frequency offset f_n = n / (N * T_s) for DFT size N) is

    H(f_n) = sum_{m=0}^{M-1} h(m) * exp(-2j*pi*n*m / N)

i.e. the n-th DFT bin of the zero-padded tap vector.  A receiver estimate
adds circular complex Gaussian noise of total variance noise_var per
subcarrier:

    Hhat(f_n) = g * H(f_n) + v_n,   v_n ~ CN(0, noise_var)

where g is a fixed per-session path gain (see below).

Channel conditions
------------------
LOS             tap 0 carries a fixed-amplitude dominant component plus a
                diffuse complex Gaussian part; the Rician factor K =
                rician_k_los is the power ratio of the two.  Mean tap power
                is K/(K+1) + 1/(K+1) = 1.
NLOS_STRUCTURE  no dominant component; every tap is zero-mean complex
                Gaussian with an exponentially decaying power profile
                proportional to exp(-tap_decay * m), normalised to total
                mean power 1.
NLOS_BODY       LOS shape, but the dominant component is attenuated by a
                per-session body-shadow loss of body_loss_db +/-
                body_loss_spread_db.  Total mean power drops below 1; the
                diffuse part is left intact, so a weakened dominant path
                is still present.

NLOS sessions additionally draw a uniform extra path loss (default 5..25 dB)
that scales the noiseless CSI before noise and RSSI, which spreads the NLOS
RSSI distribution over a wide low range while LOS RSSI stays concentrated.

Time evolution
--------------
Packets are packet_interval apart.  Each diffuse tap follows a stationary
AR(1) process with per-packet correlation rho = fading_correlation:

    h'(m) = rho * h(m) + sqrt(1 - rho^2) * w,   w ~ CN(0, sigma_m^2)

The dominant component keeps its amplitude for the whole session while its
phase advances by a per-stream Doppler increment drawn once per session.

RSSI
----
    RSSI = round(10*log10(mean_streams mean_n |Hhat(f_n)|^2) + rssi_offset_db)

clamped below at 0 and reported as an integer, like the quantised indicator
a WLAN driver exposes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError

DEFAULT_SUBCARRIERS = tuple(range(-28, 0)) + tuple(range(1, 29))


class ChannelCondition(enum.IntEnum):
    """Propagation condition of one session.  Values are the wire codes."""

    LOS = 0
    NLOS_STRUCTURE = 1
    NLOS_BODY = 2

    @property
    def is_los(self) -> bool:
        return self is ChannelCondition.LOS

    @property
    def los_label(self) -> int:
        """Binary target: 1 for LOS, 0 for either NLOS condition."""
        return int(self.is_los)


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters.  Defaults model a 20 MHz 802.11n link."""

    num_taps: int = 8
    sample_interval: float = 50e-9
    dft_size: int = 64
    subcarriers: tuple[int, ...] = DEFAULT_SUBCARRIERS
    rician_k_los: float = 10.0
    body_loss_db: float = 15.0
    body_loss_spread_db: float = 10.0
    tap_decay: float = 0.5
    noise_var: float = 1e-3
    packet_interval: float = 10e-3
    fading_correlation: float = 0.97
    num_streams: int = 6
    rssi_offset_db: float = 45.0
    nlos_extra_loss_db: tuple[float, float] = (5.0, 25.0)

    def __post_init__(self) -> None:
        if self.num_taps < 1:
            raise ConfigError("num_taps must be at least 1")
        if self.dft_size < self.num_taps:
            raise ConfigError("dft_size must be at least num_taps")
        if len(self.subcarriers) == 0:
            raise ConfigError("subcarrier set is empty")
        if len(self.subcarriers) > self.dft_size:
            raise ConfigError("more subcarriers than DFT bins")
        half = self.dft_size // 2
        for n in self.subcarriers:
            if not -half <= n <= half:
                raise ConfigError(f"subcarrier index {n} outside [-{half}, {half}]")
        if len({n % self.dft_size for n in self.subcarriers}) != len(self.subcarriers):
            raise ConfigError("subcarrier indices collide modulo dft_size")
        if self.sample_interval <= 0 or self.packet_interval <= 0:
            raise ConfigError("intervals must be positive")
        if self.rician_k_los < 0:
            raise ConfigError("rician_k_los must be non-negative")
        if self.noise_var < 0:
            raise ConfigError("noise_var must be non-negative")
        if not 0.0 <= self.fading_correlation <= 1.0:
            raise ConfigError("fading_correlation must lie in [0, 1]")
        if self.num_streams < 1:
            raise ConfigError("num_streams must be at least 1")
        if self.tap_decay < 0:
            raise ConfigError("tap_decay must be non-negative")
        if self.body_loss_spread_db < 0:
            raise ConfigError("body_loss_spread_db must be non-negative")
        lo, hi = self.nlos_extra_loss_db
        if lo > hi:
            raise ConfigError("nlos_extra_loss_db range is inverted")

    @property
    def subcarrier_spacing(self) -> float:
        return 1.0 / (self.dft_size * self.sample_interval)

    def decay_profile(self) -> np.ndarray:
        """Per-tap mean-power weights exp(-tap_decay*m), normalised to sum 1."""
        w = np.exp(-self.tap_decay * np.arange(self.num_taps))
        return w / w.sum()


@lru_cache(maxsize=32)
def _csi_transform(subcarriers: tuple[int, ...], num_taps: int, dft_size: int) -> np.ndarray:
    """(num_taps, |S|) matrix with columns exp(-2j*pi*n*m/N); CSI = h @ this."""
    n = np.asarray(subcarriers, dtype=float)
    m = np.arange(num_taps, dtype=float)
    return np.exp(-2j * np.pi * np.outer(m, n) / dft_size)


@dataclass
class FadingState:
    """Mutable per-session fading state shared by all spatial streams.

    The dominant amplitude is a session constant (already including any
    body-shadow attenuation); phases and diffuse taps evolve per packet.
    """

    condition: ChannelCondition
    dominant_amp: float
    phases: np.ndarray          # (num_streams,) current dominant phase
    phase_steps: np.ndarray     # (num_streams,) per-packet phase increment
    diffuse: np.ndarray         # (num_streams, num_taps) complex taps
    diffuse_std: np.ndarray     # (num_taps,) per-tap diffuse standard deviation
    rng: np.random.Generator = field(repr=False)

    def compose(self) -> np.ndarray:
        """Current (num_streams, num_taps) tap matrix, dominant included."""
        h = self.diffuse.astype(np.complex128, copy=True)
        h[:, 0] += self.dominant_amp * np.exp(1j * self.phases)
        return h


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """CN(0, 1) samples: variance 1/2 per real component."""
    scale = 1.0 / math.sqrt(2.0)
    return rng.normal(0.0, scale, shape) + 1j * rng.normal(0.0, scale, shape)


def init_fading_state(
    config: SimConfig, condition: ChannelCondition, rng: np.random.Generator
) -> FadingState:
    """Draw session constants and an initial stationary tap realisation."""
    k = config.rician_k_los
    m = config.num_taps
    if condition is ChannelCondition.NLOS_STRUCTURE:
        amp = 0.0
        var = config.decay_profile()
    else:
        # All LOS diffuse power rides on tap 0 so that the moment estimator
        # |mean h(0)|^2 / var h(0) recovers K directly.
        amp = 1.0 if math.isinf(k) else math.sqrt(k / (k + 1.0))
        var = np.zeros(m)
        var[0] = 0.0 if math.isinf(k) else 1.0 / (k + 1.0)
        if condition is ChannelCondition.NLOS_BODY:
            loss_db = config.body_loss_db + rng.uniform(
                -config.body_loss_spread_db, config.body_loss_spread_db
            )
            amp *= 10.0 ** (-loss_db / 20.0)
    std = np.sqrt(var)

    phases = rng.uniform(0.0, 2.0 * np.pi, config.num_streams)
    # AR(1) correlation rho = exp(-(2*pi*f_d*dt)^2 / 2) inverts to a maximum
    # per-packet dominant-phase advance of sqrt(-2*ln(rho)) radians; each
    # stream sees a random projection of it.
    rho = max(config.fading_correlation, 1e-300)
    max_step = math.sqrt(-2.0 * math.log(rho))
    phase_steps = max_step * np.cos(rng.uniform(0.0, 2.0 * np.pi, config.num_streams))
    diffuse = std * _complex_normal(rng, (config.num_streams, m))
    return FadingState(
        condition=condition,
        dominant_amp=amp,
        phases=phases,
        phase_steps=phase_steps,
        diffuse=diffuse,
        diffuse_std=std,
        rng=rng,
    )


def generate_cir(
    config: SimConfig,
    condition: ChannelCondition,
    state: FadingState,
    stream: int = 0,
    size: int | None = None,
):
    """Draw channel impulse response taps from the stationary distribution.

    Redraws the diffuse part of one stream (the dominant component keeps the
    session amplitude and current phase) and returns the composed tap vector.
    With ``size`` given, returns a (size, num_taps) batch of i.i.d. draws and
    leaves the last one in the state.
    """
    if condition is not state.condition:
        raise ValueError("fading state was initialised for a different condition")
    if not 0 <= stream < state.diffuse.shape[0]:
        raise ValueError(f"stream index {stream} out of range")
    shape = (config.num_taps,) if size is None else (size, config.num_taps)
    draw = state.diffuse_std * _complex_normal(state.rng, shape)
    state.diffuse[stream] = draw if size is None else draw[-1]
    h = draw.copy()
    h[..., 0] += state.dominant_amp * np.exp(1j * state.phases[stream])
    return h


def evolve_fading(state: FadingState, config: SimConfig) -> FadingState:
    """Advance the state by one packet interval.

    Diffuse taps follow the stationary AR(1) recursion
    h' = rho*h + sqrt(1-rho^2)*w with w drawn at the per-tap power, so the
    marginal distribution is preserved for any rho in [0, 1].  Dominant
    phases advance by their per-session steps.
    """
    rho = config.fading_correlation
    innov = state.diffuse_std * _complex_normal(state.rng, state.diffuse.shape)
    state.diffuse *= rho
    state.diffuse += math.sqrt(1.0 - rho * rho) * innov
    state.phases += state.phase_steps
    return state


def cir_to_csi(h: np.ndarray, config: SimConfig) -> np.ndarray:
    """Noiseless CSI over the configured subcarriers.

    Accepts a (num_taps,) vector or any (..., num_taps) batch; the subcarrier
    axis replaces the tap axis in the result.
    """
    h = np.asarray(h)
    if h.shape[-1] != config.num_taps:
        raise ValueError(
            f"tap axis has length {h.shape[-1]}, expected {config.num_taps}"
        )
    return h @ _csi_transform(config.subcarriers, config.num_taps, config.dft_size)


def add_estimation_noise(
    csi: np.ndarray, config: SimConfig, rng: np.random.Generator
) -> np.ndarray:
    """Add circular complex Gaussian estimation noise of variance noise_var."""
    csi = np.asarray(csi)
    return csi + math.sqrt(config.noise_var) * _complex_normal(rng, csi.shape)


def compute_rssi(csi_streams: np.ndarray, config: SimConfig) -> int:
    """Integer RSSI from the per-stream noisy CSI of one packet."""
    csi_streams = np.asarray(csi_streams)
    if csi_streams.ndim != 2 or 0 in csi_streams.shape:
        raise ValueError("csi_streams must be a non-empty (streams, subcarriers) array")
    power = np.mean(np.abs(csi_streams) ** 2)
    if power <= 0.0:
        return 0
    rssi = int(np.rint(10.0 * math.log10(power) + config.rssi_offset_db))
    return max(rssi, 0)


@dataclass(eq=False)
class PacketRecord:
    """One simulated packet: per-stream noisy CSI plus quantised RSSI.

    ``csi`` has shape (num_streams, |S|), dtype complex64 to match the
    float32 on-disk precision exactly.
    """

    sequence_number: int
    condition: ChannelCondition
    rssi: int
    csi: np.ndarray

    def equals(self, other: "PacketRecord") -> bool:
        return (
            self.sequence_number == other.sequence_number
            and self.condition == other.condition
            and self.rssi == other.rssi
            and self.csi.shape == other.csi.shape
            and bool(np.array_equal(self.csi, other.csi))
        )


def simulate_session(
    config: SimConfig,
    condition: ChannelCondition,
    count: int,
    seed,
) -> list[PacketRecord]:
    """Simulate one contiguous session of ``count`` packets.

    A session keeps one fading state and one path gain throughout.  NLOS
    sessions draw an extra uniform path loss from nlos_extra_loss_db; LOS
    sessions have unit gain.  Fully deterministic given config and seed.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = np.random.default_rng(seed)
    if condition is ChannelCondition.LOS:
        gain = 1.0
    else:
        lo, hi = config.nlos_extra_loss_db
        gain = 10.0 ** (-rng.uniform(lo, hi) / 20.0)
    state = init_fading_state(config, condition, rng)

    records = []
    for p in range(count):
        if p:
            evolve_fading(state, config)
        csi = gain * cir_to_csi(state.compose(), config)
        csi = add_estimation_noise(csi, config, rng).astype(np.complex64)
        records.append(
            PacketRecord(
                sequence_number=p,
                condition=condition,
                rssi=compute_rssi(csi, config),
                csi=csi,
            )
        )
    return records
