"""BER/EVM sweeps, SNR-JSR achievability frontiers, constellation export.

Grid points run in a thread pool (numpy releases the GIL in BLAS/FFT); each
point draws from its own generator derived from (seed, stream, point index)
and results are collected in grid order, so outputs are independent of
worker count. ``AECOMM_THREADS`` caps the pool.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import seeding
from .baseline import ConstellationSpec, conventional_frames
from .errors import ConfigError
from .link import AeModel, end_to_end, hard_bits
from .phy import ChannelParams, JammerParams, LinkConfig, compute_evm
from .quantize import QuantizedModel, quantized_end_to_end


class FrontierViolation(RuntimeError):
    """Frontier min-SNR decreased with JSR beyond Monte Carlo tolerance."""


def worker_count() -> int:
    cap = os.environ.get("AECOMM_THREADS")
    n = min(4, os.cpu_count() or 1)
    if cap:
        n = max(1, min(n, int(cap)))
    return n


@dataclass
class SweepSpec:
    snr_grid_db: list
    n_frames: int = 20_000
    metric: str = "ber"              # "ber" or "evm-ber" (rows carry both)
    jam: JammerParams | None = None
    seed: int = 0
    min_errors: int = 100            # early stop once this many bit errors seen

    def __post_init__(self):
        if not list(self.snr_grid_db):
            raise ConfigError("snr_grid_db must be nonempty")
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")


@dataclass
class FrontierSpec:
    jsr_grid_db: list
    ber_target: float = 1e-2
    snr_search_range_db: tuple = (-5.0, 30.0)
    snr_step_db: float = 0.5
    n_te_jam: int = 1
    seed: int = 0
    max_frames: int = 60_000

    def __post_init__(self):
        if not 0.0 < self.ber_target < 0.5:
            raise ConfigError("ber_target must be in (0, 0.5)")
        lo, hi = self.snr_search_range_db
        if not lo < hi:
            raise ConfigError("snr search range must satisfy lo < hi")


class AeSystem:
    """Adapter running an autoencoder (float or quantized) link."""

    def __init__(self, model, h=None):
        self.model = model
        self.h = h
        self.cfg: LinkConfig = model.cfg
        if isinstance(model, AeModel):
            model.eval()

    def run(self, bits, ch, jam, rng):
        if isinstance(self.model, QuantizedModel):
            probs = quantized_end_to_end(self.model, bits, ch, jam, rng, h=self.h)
            # quantized path reports BER only through probabilities; grids are
            # recomputed by the float trace when EVM is needed
            return hard_bits(probs), None, None
        trace = end_to_end(self.model, bits, ch, jam, rng, h=self.h)
        return hard_bits(trace.bit_probs), trace.tx_grid, trace.rx_grid


class ConventionalSystem:
    """Adapter running the Gray-modem repetition link."""

    def __init__(self, spec: ConstellationSpec, cfg: LinkConfig):
        if spec.n_b != cfg.k:
            raise ConfigError(f"constellation n_b={spec.n_b} != link k={cfg.k}")
        self.spec = spec
        self.cfg = cfg

    def run(self, bits, ch, jam, rng):
        bits_hat, tx_grid, _, rx_grid = conventional_frames(
            self.spec, self.cfg, ch, jam, bits, rng)
        return bits_hat, tx_grid, rx_grid


def measure_point(system, ch: ChannelParams, jam: JammerParams | None,
                  n_frames: int, rng, min_errors: int | None = None,
                  batch_frames: int = 2048):
    """(ber, evm_pct, frames_run) for one operating point."""
    bpf = system.cfg.bits_per_frame
    errors = 0
    frames = 0
    err_energy = 0.0
    ref_energy = 0.0
    while frames < n_frames:
        n = min(batch_frames, n_frames - frames)
        bits = rng.integers(0, 2, size=(n, bpf)).astype(np.float64)
        bits_hat, tx_grid, rx_grid = system.run(bits, ch, jam, rng)
        errors += int(np.sum(bits_hat != bits))
        frames += n
        if tx_grid is not None:
            err_energy += float(np.sum(np.abs(rx_grid - tx_grid) ** 2))
            ref_energy += float(np.sum(np.abs(tx_grid) ** 2))
        if min_errors is not None and errors >= min_errors:
            break
    evm = 100.0 * np.sqrt(err_energy / ref_energy) if ref_energy > 0 else float("nan")
    return errors / (frames * bpf), evm, frames


def sweep_snr_ber(system, spec: SweepSpec, ch_template: ChannelParams):
    """Rows of (snr_db, ber, evm_pct, frames) across the SNR grid."""
    def point(i_snr):
        i, snr = i_snr
        ch = replace(ch_template, snr_db=float(snr))
        rng = seeding.derive(spec.seed, seeding.STREAM_SWEEP, i)
        ber, evm, frames = measure_point(system, ch, spec.jam, spec.n_frames,
                                         rng, min_errors=spec.min_errors)
        return (float(snr), ber, evm, frames)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(point, enumerate(spec.snr_grid_db)))


def _ber_for_decision(system, ch, jam, target, max_frames, rng):
    """BER with enough bits that the decision error stays <= target/5."""
    bpf = system.cfg.bits_per_frame
    errors = 0
    bits_run = 0
    se_goal = target / 5.0
    while True:
        n = min(4096, max(256, max_frames // 8))
        n = min(n, max_frames - bits_run // bpf)
        if n <= 0:
            break
        bits = rng.integers(0, 2, size=(n, bpf)).astype(np.float64)
        bits_hat, _, _ = system.run(bits, ch, jam, rng)
        errors += int(np.sum(bits_hat != bits))
        bits_run += n * bpf
        p = errors / bits_run
        se = np.sqrt(max(p, target) * (1.0 - min(p, 0.5)) / bits_run)
        if se <= se_goal or p > 5.0 * target:
            break
    return errors / bits_run


def frontier_snr_jsr(system, spec: FrontierSpec, ch_template: ChannelParams):
    """Rows of (jsr_db, min_snr_db or nan, reachable) per JSR grid value.

    For each JSR the SNR grid is scanned in ascending order; the first SNR
    whose measured BER is at or below the target wins. A linear scan (not
    bisection) tolerates Monte Carlo noise near the target. Raises
    FrontierViolation if min-SNR decreases with JSR by more than one grid
    step.
    """
    lo, hi = spec.snr_search_range_db
    snr_grid = np.arange(lo, hi + spec.snr_step_db / 2, spec.snr_step_db)

    def row(i_jsr):
        i, jsr = i_jsr
        jam = JammerParams(enabled=True, jsr_db=float(jsr),
                           n_jam_symbols=spec.n_te_jam)
        for j, snr in enumerate(snr_grid):
            ch = replace(ch_template, snr_db=float(snr))
            rng = seeding.derive(spec.seed, seeding.STREAM_SWEEP, i, j)
            ber = _ber_for_decision(system, ch, jam, spec.ber_target,
                                    spec.max_frames, rng)
            if ber <= spec.ber_target:
                return (float(jsr), float(snr), 1)
        return (float(jsr), float("nan"), 0)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        rows = list(pool.map(row, enumerate(spec.jsr_grid_db)))

    last = None
    for jsr, snr, ok in rows:
        if not ok:
            last = None
            continue
        if last is not None and snr < last - spec.snr_step_db - 1e-9:
            raise FrontierViolation(
                f"min SNR fell from {last} to {snr} dB at JSR {jsr} dB"
            )
        last = snr
    return rows


def export_constellation(model_or_spec, snr_db: float | None = None,
                         max_patterns: int = 4096, seed: int = 0):
    """Rows of (i, q, bits) — encoder output points per bit pattern.

    For a trained model every bit block is enumerated when 2**bits_per_frame
    fits in ``max_patterns``, otherwise that many random blocks are sampled;
    each grid element contributes one point labeled with its subcarrier's
    bits. ``snr_db`` is echo metadata: the constellation is a property of the
    trained weights. Conventional specs export their fixed points.
    """
    if isinstance(model_or_spec, ConstellationSpec):
        spec = model_or_spec
        return [(float(p.real), float(p.imag), "".join(map(str, lab)))
                for p, lab in zip(spec.points, spec.labels)]

    model = model_or_spec
    cfg = model.cfg
    if cfg.n_t > 1:
        raise ConfigError("constellation export is defined for single-antenna configs")
    from .link import encode
    model.eval()
    bpf = cfg.bits_per_frame
    if 2 ** bpf <= max_patterns:
        ints = np.arange(2 ** bpf, dtype=np.uint64)
        blocks = ((ints[:, None] >> np.arange(bpf, dtype=np.uint64)[::-1]) & 1).astype(np.float64)
    else:
        rng = seeding.derive(seed, seeding.STREAM_SWEEP)
        blocks = rng.integers(0, 2, size=(max_patterns, bpf)).astype(np.float64)
    grid = encode(model, blocks)
    rows = []
    for b in range(blocks.shape[0]):
        for s in range(cfg.n_fft):
            label = "".join(str(int(v)) for v in blocks[b, s * cfg.k:(s + 1) * cfg.k])
            for u in range(cfg.n_ch):
                z = grid[b, s, u]
                rows.append((float(z.real), float(z.imag), label))
    return rows


# --- CSV emission -----------------------------------------------------------

SWEEP_HEADER = "snr_db,ber,evm_pct,frames"
FRONTIER_HEADER = "jsr_db,min_snr_db,reachable"
CONSTELLATION_HEADER = "i,q,bits"
TRAINLOG_HEADER = "epoch,loss_ae,loss_it,loss_rs,loss_total,val_ber"


def fmt(value) -> str:
    """Numbers at 17 significant digits; everything else via str."""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_csv(path: str, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
