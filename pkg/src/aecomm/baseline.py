"""Conventional reference chain: Gray modems, repetition coding, ZF MIMO.

These run through the exact same waveform/channel path as the autoencoder
(:mod:`aecomm.phy`), with no phase/frequency compensation at the receiver,
so BER comparisons isolate the transceiver design.

Label conventions (fixed here since BER is label-invariant on symmetric
channels): BPSK maps bit 0 to +1 and bit 1 to -1. QPSK puts Gray labels
00, 01, 11, 10 on the quadrants counter-clockwise from (1+j)/sqrt(2).
Square QAM Gray-codes each axis independently, first half of the bits on I,
second half on Q, levels ascending.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .phy import (ChannelParams, JammerParams, LinkConfig, apply_channel,
                  inject_interference, mimo_symbol_channel, ofdm_demodulate,
                  ofdm_modulate)


@dataclass
class ConstellationSpec:
    n_b: int
    points: np.ndarray           # (2**n_b,) complex, unit average energy
    labels: np.ndarray           # (2**n_b, n_b) 0/1 rows, Gray coded

    def __post_init__(self):
        m = 2 ** self.n_b
        if self.points.shape != (m,) or self.labels.shape != (m, self.n_b):
            raise ConfigError("constellation points/labels sized for 2**n_b")


def _gray_axis(n: int) -> np.ndarray:
    """Gray code sequence for 2**n ascending amplitude levels."""
    codes = np.arange(2 ** n)
    gray = codes ^ (codes >> 1)
    return ((gray[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.int8)


def make_constellation(n_b: int) -> ConstellationSpec:
    """Gray-mapped unit-energy constellation for n_b in {1, 2, 4, 6}."""
    if n_b == 1:
        points = np.array([1.0 + 0j, -1.0 + 0j])
        labels = np.array([[0], [1]], dtype=np.int8)
    elif n_b == 2:
        points = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2.0)
        labels = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.int8)
    elif n_b in (4, 6):
        half = n_b // 2
        n_lvl = 2 ** half
        levels = np.arange(-(n_lvl - 1), n_lvl, 2, dtype=np.float64)
        axis_labels = _gray_axis(half)
        i_idx, q_idx = np.meshgrid(np.arange(n_lvl), np.arange(n_lvl), indexing="ij")
        points = levels[i_idx.ravel()] + 1j * levels[q_idx.ravel()]
        points = points / np.sqrt(np.mean(np.abs(points) ** 2))
        labels = np.concatenate(
            [axis_labels[i_idx.ravel()], axis_labels[q_idx.ravel()]], axis=1
        )
    else:
        raise ConfigError(f"unsupported bits per symbol: {n_b}")
    return ConstellationSpec(n_b=n_b, points=points, labels=labels)


def _label_lut(spec: ConstellationSpec) -> np.ndarray:
    """label integer -> point index."""
    weights = 1 << np.arange(spec.n_b - 1, -1, -1)
    ints = spec.labels @ weights
    lut = np.empty(2 ** spec.n_b, dtype=np.int64)
    lut[ints] = np.arange(2 ** spec.n_b)
    return lut


def modulate_conventional(bits, spec: ConstellationSpec) -> np.ndarray:
    """Gray-map a bit stream onto constellation points (last axis folds)."""
    bits = np.asarray(bits)
    if bits.shape[-1] % spec.n_b != 0:
        raise ConfigError(
            f"bit count {bits.shape[-1]} not divisible by n_b={spec.n_b}"
        )
    groups = bits.reshape(bits.shape[:-1] + (-1, spec.n_b)).astype(np.int64)
    weights = 1 << np.arange(spec.n_b - 1, -1, -1)
    ints = groups @ weights
    return spec.points[_label_lut(spec)[ints]]


def demodulate_hard(symbols, spec: ConstellationSpec) -> np.ndarray:
    """Nearest-point slicing; ties break toward the lowest point index."""
    symbols = np.asarray(symbols, dtype=np.complex128)
    d2 = np.abs(symbols[..., None] - spec.points) ** 2
    idx = np.argmin(d2, axis=-1)
    out = spec.labels[idx]
    return out.reshape(symbols.shape[:-1] + (-1,))


def repetition_encode(symbols, n_ch: int) -> np.ndarray:
    """Copy each subcarrier symbol into all n_ch channel uses."""
    if n_ch < 1:
        raise ConfigError("n_ch must be >= 1")
    symbols = np.asarray(symbols, dtype=np.complex128)
    return np.repeat(symbols[..., None], n_ch, axis=-1)


def repetition_combine(grid) -> np.ndarray:
    """Coherent average of the n_ch received copies."""
    return np.mean(np.asarray(grid, dtype=np.complex128), axis=-1)


def sample_snr_db(gamma_b_db: float, n_b: int, n_ch: int) -> float:
    """Per-bit SNR (Eb/N0) -> per-sample SNR used by the channel model.

    Eb counts the total received energy spent per information bit across the
    n_ch repetitions, so sample SNR = gamma_b * n_b / n_ch.
    """
    return gamma_b_db + 10.0 * np.log10(n_b / n_ch)


def conventional_frames(spec: ConstellationSpec, cfg: LinkConfig,
                        ch: ChannelParams, jam: JammerParams | None,
                        bits, rng):
    """One batch through modulate -> OFDM -> channel -> combine -> slice.

    Returns (bits_hat, tx_grid, combined_rx_symbols, rx_grid).
    """
    symbols = modulate_conventional(bits, spec)
    grid = repetition_encode(symbols, cfg.n_ch)
    rng_noise, rng_jam = rng.spawn(2)
    frame = ofdm_modulate(grid, cfg)
    frame = apply_channel(frame, ch, rng_noise)
    rx_grid = ofdm_demodulate(frame, cfg)
    if jam is not None and jam.enabled:
        rx_grid = inject_interference(rx_grid, jam, rng_jam,
                                      signal_energy_per_use=float(cfg.n_fft))
    combined = repetition_combine(rx_grid)
    bits_hat = demodulate_hard(combined, spec)
    return bits_hat, grid, combined, rx_grid


def conventional_link_ber(spec: ConstellationSpec, cfg: LinkConfig,
                          ch: ChannelParams, jam: JammerParams | None,
                          n_frames: int, rng, batch_frames: int = 4096) -> float:
    """Monte Carlo BER of the uncompensated conventional link."""
    if n_frames < 1:
        raise ConfigError("n_frames must be >= 1")
    bpf = spec.n_b * cfg.n_fft
    errors = 0
    done = 0
    while done < n_frames:
        n = min(batch_frames, n_frames - done)
        bits = rng.integers(0, 2, size=(n, bpf)).astype(np.int8)
        bits_hat, _, _, _ = conventional_frames(spec, cfg, ch, jam, bits, rng)
        errors += int(np.sum(bits_hat != bits))
        done += n
    return errors / (n_frames * bpf)


def mimo_zf_detect(rx, h) -> np.ndarray:
    """Zero-forcing estimates x_hat = pinv(H) @ y for each received vector."""
    rx = np.asarray(rx, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim != 2 or rx.shape[-1] != h.shape[0]:
        raise ConfigError(f"H shape {h.shape} does not match rx {rx.shape}")
    cond = np.linalg.cond(h)
    if not np.isfinite(cond) or cond > 1e8:
        warnings.warn(f"ill-conditioned H (cond={cond:.3g}); using pseudo-inverse")
    h_pinv = np.linalg.pinv(h)
    return rx @ h_pinv.T


def conventional_mimo_ber(spec: ConstellationSpec, cfg: LinkConfig,
                          ch: ChannelParams, jam: JammerParams | None,
                          h, n_frames: int, rng, batch_frames: int = 8192) -> float:
    """BER of per-antenna Gray modulation with perfect-CSI ZF detection.

    Shares :func:`aecomm.phy.mimo_symbol_channel` with the autoencoder MIMO
    path. The detector knows the spatial matrix H but not the phase offset.
    """
    bpf = spec.n_b * cfg.n_t
    errors = 0
    done = 0
    h = np.asarray(h, dtype=np.complex128)
    while done < n_frames:
        n = min(batch_frames, n_frames - done)
        bits = rng.integers(0, 2, size=(n, bpf)).astype(np.int8)
        tx = modulate_conventional(bits, spec)
        rng_noise, rng_jam = rng.spawn(2)
        y, _, _ = mimo_symbol_channel(tx, h, ch, jam, rng_noise, rng_jam)
        x_hat = mimo_zf_detect(y, h)
        bits_hat = demodulate_hard(x_hat, spec)
        errors += int(np.sum(bits_hat != bits))
        done += n
    return errors / (n_frames * bpf)
