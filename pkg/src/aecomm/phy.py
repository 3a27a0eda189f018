"""OFDM waveform chain and impairment simulator.

Conventions
-----------
* A frequency-domain grid is a complex array of shape ``(..., n_fft, n_ch)``:
  one symbol per (subcarrier, channel use). A time-domain frame is
  ``(..., n_samp, n_ch)`` with ``n_samp = n_fft + n_cp``. Leading axes are
  treated as a batch of independent frames.
* Both DFT directions use unitary (1/sqrt(n_fft)) normalization so energy
  bookkeeping is symmetric (Parseval holds exactly).
* Channel uses are transmitted back to back, so the global sample index in
  :func:`apply_channel` runs over channel use first, then sample within it.

All operations are pure functions of (inputs, rng).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SUPPORTED_BITS_PER_SYMBOL = (1, 2, 4, 6)


@dataclass
class LinkConfig:
    """Static description of one link: OFDM numerology, net width, antennas."""

    n_fft: int = 12
    n_cp: int = 3
    k: int = 2            # bits per symbol
    n_ch: int = 1         # channel uses (redundancy)
    hidden: int = 800     # dense hidden width
    n_t: int = 1          # transmit antennas
    n_r: int = 1          # receive antennas

    def __post_init__(self):
        if self.n_fft < 1:
            raise ConfigError(f"n_fft must be >= 1, got {self.n_fft}")
        if not 0 <= self.n_cp <= self.n_fft:
            raise ConfigError(f"n_cp must be in [0, n_fft], got {self.n_cp}")
        if self.k not in SUPPORTED_BITS_PER_SYMBOL:
            raise ConfigError(f"k must be one of {SUPPORTED_BITS_PER_SYMBOL}, got {self.k}")
        if self.n_ch < 1:
            raise ConfigError(f"n_ch must be >= 1, got {self.n_ch}")
        if self.hidden < 1:
            raise ConfigError(f"hidden must be >= 1, got {self.hidden}")
        if self.n_t < 1 or self.n_r < 1:
            raise ConfigError("antenna counts must be >= 1")
        if self.n_t != self.n_r:
            raise ConfigError("spatial multiplexing here needs n_t == n_r")

    @property
    def n_samp(self) -> int:
        return self.n_fft + self.n_cp

    @property
    def bits_per_frame(self) -> int:
        """Information bits carried by one forward pass."""
        if self.n_t > 1:
            return self.k * self.n_t
        return self.k * self.n_fft

    @property
    def grid_reals(self) -> int:
        """Real degrees of freedom at the encoder output."""
        if self.n_t > 1:
            return 2 * self.n_t
        return 2 * self.n_fft * self.n_ch


@dataclass
class ChannelParams:
    """Impairment configuration: AWGN level plus static phase/frequency error.

    ``freq_offset_norm`` is in cycles per sample, keeping the simulation
    sample-rate free; the default 1e-4 corresponds to a 30 Hz offset under a
    nominal 300 kHz sampling rate. ``snr_db = inf`` disables noise.
    """

    snr_db: float = 10.0
    phase_offset_deg: float = 10.0
    freq_offset_norm: float = 1e-4
    impairments_enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.freq_offset_norm < 0.5:
            raise ConfigError(
                f"freq_offset_norm must be in [0, 0.5), got {self.freq_offset_norm}"
            )
        if math.isnan(self.snr_db):
            raise ConfigError("snr_db must be a real number (use inf for noiseless)")


@dataclass
class JammerParams:
    """Tone-jammer configuration.

    The jammer hits ``n_jam_symbols`` resource elements per channel use; the
    total injected energy per channel use is ``10^(jsr_db/10)`` times the
    signal energy per channel use, split equally across the hit symbols.
    Each hit gets an independent phase ``pi * j / phase_steps`` with ``j``
    uniform over ``{0, ..., phase_steps - 1}``.
    """

    enabled: bool = True
    jsr_db: float = 0.0
    n_jam_symbols: int = 1
    phase_steps: int = 50

    def __post_init__(self):
        if self.n_jam_symbols < 1:
            raise ConfigError(f"n_jam_symbols must be >= 1, got {self.n_jam_symbols}")
        if self.phase_steps < 1:
            raise ConfigError(f"phase_steps must be >= 1, got {self.phase_steps}")


def _check_grid(grid: np.ndarray, cfg: LinkConfig) -> np.ndarray:
    grid = np.asarray(grid)
    if grid.ndim < 2 or grid.shape[-2] != cfg.n_fft or grid.shape[-1] != cfg.n_ch:
        raise ConfigError(
            f"grid shape {grid.shape} does not end in (n_fft={cfg.n_fft}, n_ch={cfg.n_ch})"
        )
    return grid.astype(np.complex128, copy=False)


def _check_frame(frame: np.ndarray, cfg: LinkConfig) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim < 2 or frame.shape[-2] != cfg.n_samp or frame.shape[-1] != cfg.n_ch:
        raise ConfigError(
            f"frame shape {frame.shape} does not end in (n_samp={cfg.n_samp}, n_ch={cfg.n_ch})"
        )
    return frame.astype(np.complex128, copy=False)


def ofdm_modulate(grid: np.ndarray, cfg: LinkConfig) -> np.ndarray:
    """Unitary IFFT per channel use, then prepend the cyclic prefix."""
    grid = _check_grid(grid, cfg)
    time = np.fft.ifft(grid, axis=-2, norm="ortho")
    if cfg.n_cp == 0:
        return time
    cp = time[..., time.shape[-2] - cfg.n_cp:, :]
    return np.concatenate([cp, time], axis=-2)


def ofdm_demodulate(frame: np.ndarray, cfg: LinkConfig) -> np.ndarray:
    """Strip the cyclic prefix per channel use and take the unitary FFT."""
    frame = _check_frame(frame, cfg)
    payload = frame[..., cfg.n_cp:, :]
    return np.fft.fft(payload, axis=-2, norm="ortho")


def sample_phases(frame_shape, ch: ChannelParams) -> np.ndarray:
    """Per-sample carrier phase (radians) for a frame of the given shape.

    The global sample index runs channel use by channel use (uses are sent
    sequentially), restarting at zero for each frame in a batch.
    """
    n_samp, n_ch = frame_shape[-2], frame_shape[-1]
    s = np.arange(n_samp)[:, None]
    u = np.arange(n_ch)[None, :]
    m = u * n_samp + s
    return 2.0 * np.pi * ch.freq_offset_norm * m + np.deg2rad(ch.phase_offset_deg)


def apply_channel(frame: np.ndarray, ch: ChannelParams, rng) -> np.ndarray:
    """Rotate by the phase/frequency offset, then add receiver AWGN.

    Noise power is calibrated against the measured average power of the
    (rotated) frame: sigma^2 = P_sig / 10^(snr_db/10), split equally between
    I and Q. Offsets are skipped when ``impairments_enabled`` is false;
    ``snr_db = inf`` yields a noiseless pass-through of the rotated frame.
    """
    frame = np.asarray(frame, dtype=np.complex128)
    out = frame
    if ch.impairments_enabled:
        out = frame * np.exp(1j * sample_phases(frame.shape, ch))
    if np.isinf(ch.snr_db):
        return out
    # One power measurement over everything passed in: a batch of frames is
    # a single measurement window, so the noise level does not chase
    # per-frame power fluctuations (receiver noise is signal-independent).
    p_sig = np.mean(np.abs(out) ** 2)
    sigma2 = p_sig / 10.0 ** (ch.snr_db / 10.0)
    scale = np.sqrt(sigma2 / 2.0)
    noise = scale * (rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape))
    return out + noise


def inject_interference(grid: np.ndarray, jam: JammerParams, rng,
                        signal_energy_per_use: float | None = None) -> np.ndarray:
    """Add the tone jammer to randomly selected resource elements.

    Per channel use, ``n_jam_symbols`` distinct subcarriers are drawn
    uniformly without replacement; each gets an additive term of magnitude
    ``sqrt(E_J / n_jam_symbols)`` where ``E_J = 10^(jsr_db/10) * E_sig`` and
    ``E_sig`` is the signal energy per channel use. By default ``E_sig`` is
    measured from ``grid`` itself; pass ``signal_energy_per_use`` to pin the
    reference (e.g. the known clean-signal energy when jamming a noisy grid).
    """
    if not jam.enabled:
        return np.asarray(grid, dtype=np.complex128)
    grid = np.asarray(grid, dtype=np.complex128)
    n_fft, n_ch = grid.shape[-2], grid.shape[-1]
    if jam.n_jam_symbols > n_fft:
        raise ConfigError(
            f"n_jam_symbols={jam.n_jam_symbols} exceeds n_fft={n_fft}"
        )
    if signal_energy_per_use is None:
        # energy summed over subcarriers, averaged over uses (and batch)
        signal_energy_per_use = float(np.mean(np.sum(np.abs(grid) ** 2, axis=-2)))
    e_jam = 10.0 ** (jam.jsr_db / 10.0) * signal_energy_per_use
    amp = np.sqrt(e_jam / jam.n_jam_symbols)

    lead = grid.shape[:-2]
    # uniform n_jam-subsets per (frame, use): argsort of iid uniforms
    order = np.argsort(rng.random(lead + (n_ch, n_fft)), axis=-1)
    picks = order[..., : jam.n_jam_symbols]                  # (..., n_ch, n_jam)
    steps = rng.integers(0, jam.phase_steps, size=picks.shape)
    tone = amp * np.exp(1j * np.pi * steps / jam.phase_steps)

    add = np.zeros(lead + (n_ch, n_fft), dtype=np.complex128)
    np.put_along_axis(add, picks, tone, axis=-1)
    return grid + np.swapaxes(add, -1, -2)


def compute_evm(reference: np.ndarray, received: np.ndarray) -> float:
    """RMS error vector magnitude in percent of the reference amplitude."""
    reference = np.asarray(reference)
    received = np.asarray(received)
    if reference.shape != received.shape:
        raise ConfigError(
            f"reference shape {reference.shape} != received shape {received.shape}"
        )
    ref_energy = np.sum(np.abs(reference) ** 2)
    if ref_energy == 0.0:
        raise ConfigError("EVM reference must not be all-zero")
    err_energy = np.sum(np.abs(received - reference) ** 2)
    return 100.0 * float(np.sqrt(err_energy / ref_energy))


def mimo_symbol_channel(tx: np.ndarray, h: np.ndarray, ch: ChannelParams,
                        jam: JammerParams | None, rng_noise, rng_jam):
    """Single-symbol-period spatial channel shared by AE and conventional MIMO.

    ``tx`` is ``(..., n_t)`` unit-average-power symbols, ``h`` is
    ``(n_r, n_t)`` or per-frame ``(..., n_r, n_t)``. Receive antenna ``i``
    sees ``sum_t H[i,t] tx_t`` rotated by the static phase offset (the
    frequency offset has no effect within a single sample), plus AWGN with
    per-antenna power ``P_i / snr`` where ``P_i = sum_t |H[i,t]|^2`` is the
    channel-implied average received power. The jammer hits
    ``n_jam_symbols`` of the ``n_r`` received symbols with total energy
    ``10^(jsr_db/10) * sum_i P_i``, phase ``pi * j / phase_steps``.

    Returns (y, rot, h) with the rotation factor and the H actually used.
    """
    tx = np.asarray(tx, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    n_r = h.shape[-2]
    lead = tx.shape[:-1]
    y = np.einsum("...rt,...t->...r", h, tx)
    rot = np.exp(1j * np.deg2rad(ch.phase_offset_deg)) if ch.impairments_enabled else 1.0
    y = y * rot
    p_rx = np.sum(np.abs(h) ** 2, axis=-1)
    p_rx = np.broadcast_to(p_rx, lead + (n_r,))
    if not np.isinf(ch.snr_db):
        scale = np.sqrt(p_rx / 10.0 ** (ch.snr_db / 10.0) / 2.0)
        y = y + scale * (rng_noise.standard_normal(y.shape)
                         + 1j * rng_noise.standard_normal(y.shape))
    if jam is not None and jam.enabled:
        if jam.n_jam_symbols > n_r:
            raise ConfigError(f"n_jam_symbols={jam.n_jam_symbols} exceeds n_r={n_r}")
        e_jam = 10.0 ** (jam.jsr_db / 10.0) * np.sum(p_rx, axis=-1, keepdims=True)
        amp = np.sqrt(e_jam / jam.n_jam_symbols)
        order = np.argsort(rng_jam.random(lead + (n_r,)), axis=-1)
        picks = order[..., : jam.n_jam_symbols]
        steps = rng_jam.integers(0, jam.phase_steps, size=picks.shape)
        tone = amp * np.exp(1j * np.pi * steps / jam.phase_steps)
        add = np.zeros(lead + (n_r,), dtype=np.complex128)
        np.put_along_axis(add, picks, tone, axis=-1)
        y = y + add
    return y, rot, h


def mimo_channel_apply(frames: np.ndarray, h: np.ndarray, ch: ChannelParams, rng) -> np.ndarray:
    """Mix per-antenna frames through H, then run each receive chain.

    ``frames`` has the transmit antenna as its leading axis; receive antenna
    ``i`` observes ``sum_t H[i, t] * frames[t]`` followed by
    :func:`apply_channel` with shared offsets and independent noise draws.
    """
    frames = np.asarray(frames, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim != 2 or frames.shape[0] != h.shape[1]:
        raise ConfigError(
            f"H shape {h.shape} does not match {frames.shape[0]} transmit frames"
        )
    mixed = np.einsum("it,t...->i...", h, frames)
    return np.stack([apply_channel(mixed[i], ch, rng) for i in range(h.shape[0])])
