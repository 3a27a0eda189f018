"""Autoencoder transceiver: model construction and the end-to-end pipeline.

The transmit side is a dense encoder mapping a block of bits to I/Q values;
the receive side is a dense decoder mapping the received I/Q values back to
bit probabilities. Between them sits the OFDM waveform chain and channel
from :mod:`aecomm.phy` (or, for multi-antenna configs, a one-symbol-per-pass
spatial channel).

The whole composition is differentiable with respect to the network
parameters: every channel stage is complex-affine, so its adjoint is applied
analytically during the backward pass while noise, jammer and channel draws
are held constant.

Real/complex packing convention: real vector entries ``(2i, 2i+1)`` are the
(I, Q) parts of complex element ``i``, elements ordered subcarrier-major /
channel-use-minor (C order of the ``(n_fft, n_ch)`` grid).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, NumericsError
from .phy import ChannelParams, JammerParams, LinkConfig, sample_phases

DROPOUT_RATE = 0.25


@dataclass
class AeModel:
    encoder: nn.DenseNet
    decoder: nn.DenseNet
    cfg: LinkConfig

    def train(self) -> "AeModel":
        self.encoder.train()
        self.decoder.train()
        return self

    def eval(self) -> "AeModel":
        self.encoder.eval()
        self.decoder.eval()
        return self


@dataclass
class PipelineTrace:
    """One pass through the link: EVM reference, EVM measurement point, output."""

    tx_grid: np.ndarray   # encoder output after power normalization
    rx_grid: np.ndarray   # decoder input (post channel, post jammer)
    bit_probs: np.ndarray


def build_ae(cfg: LinkConfig, rng) -> AeModel:
    """Construct encoder/decoder nets sized for ``cfg``.

    Single-antenna: encoder in -> hidden -> out with one hidden layer,
    decoder with two. Multi-antenna: encoder with two hidden layers, decoder
    with three, one complex symbol per transmit antenna. ReLU + 25% dropout
    after every hidden linear layer; the decoder ends in a sigmoid so its
    outputs are bit probabilities. Weights are Glorot-uniform, biases zero.
    """
    h = cfg.hidden
    if cfg.n_t > 1:
        enc_dims = [cfg.k * cfg.n_t, h, h, 2 * cfg.n_t]
        dec_dims = [2 * cfg.n_r, h, h, h, cfg.k * cfg.n_r]
    else:
        enc_dims = [cfg.k * cfg.n_fft, h, 2 * cfg.n_fft * cfg.n_ch]
        dec_dims = [2 * cfg.n_fft * cfg.n_ch, h, h, cfg.k * cfg.n_fft]

    def stack(dims, sigmoid_out):
        layers = []
        for i in range(len(dims) - 1):
            layers.append(nn.Linear.glorot(dims[i], dims[i + 1], rng))
            if i < len(dims) - 2:
                layers.append(nn.ReLU())
                layers.append(nn.Dropout(DROPOUT_RATE))
        if sigmoid_out:
            layers.append(nn.Sigmoid())
        return nn.DenseNet(layers)

    return AeModel(stack(enc_dims, False), stack(dec_dims, True), cfg)


def param_count(model: AeModel) -> dict:
    """Exact parameter totals (weights plus biases) per subnet."""
    enc = model.encoder.param_count()
    dec = model.decoder.param_count()
    return {"encoder": enc, "decoder": dec, "total": enc + dec}


def reals_to_complex(v: np.ndarray, shape: tuple) -> np.ndarray:
    """(..., 2K) interleaved reals -> (..., *shape) complex, C element order."""
    v = np.asarray(v, dtype=np.float64)
    pairs = v.reshape(v.shape[:-1] + shape + (2,))
    return pairs[..., 0] + 1j * pairs[..., 1]


def complex_to_reals(z: np.ndarray, n_trailing: int) -> np.ndarray:
    """Inverse of :func:`reals_to_complex` over the last ``n_trailing`` axes."""
    z = np.asarray(z, dtype=np.complex128)
    pairs = np.stack([z.real, z.imag], axis=-1)
    lead = z.shape[: z.ndim - n_trailing]
    return pairs.reshape(lead + (-1,))


def _normalize_power(x: np.ndarray, n_axes: int):
    """Scale each frame to average symbol power 1 over its last n_axes axes."""
    axes = tuple(range(-n_axes, 0))
    p = np.mean(np.abs(x) ** 2, axis=axes, keepdims=True)
    if np.any(p == 0.0):
        raise NumericsError("encoder produced an all-zero frame")
    s = np.sqrt(p)
    return x / s, s


def _normalize_backward(g: np.ndarray, x_hat: np.ndarray, s: np.ndarray, n_axes: int):
    """Adjoint of per-frame RMS normalization (complex-packed gradients)."""
    axes = tuple(range(-n_axes, 0))
    k = 1
    for a in axes:
        k *= x_hat.shape[a]
    dot = np.sum((np.conj(g) * x_hat).real, axis=axes, keepdims=True)
    return (g - x_hat * (dot / k)) / s


def encode(model: AeModel, bits, rng=None) -> np.ndarray:
    """Bits (or real-valued perturbed bits) -> normalized transmit symbols.

    Returns the frequency-domain grid ``(..., n_fft, n_ch)`` for
    single-antenna configs, or one complex symbol per transmit antenna
    ``(..., n_t)`` for multi-antenna configs, at average power exactly 1.
    """
    cfg = model.cfg
    bits = np.asarray(bits, dtype=np.float64)
    if bits.shape[-1] != cfg.bits_per_frame:
        raise ConfigError(
            f"bit block length {bits.shape[-1]} != expected {cfg.bits_per_frame}"
        )
    out, _ = nn.net_forward(model.encoder, bits, rng)
    if cfg.n_t > 1:
        x = reals_to_complex(out, (cfg.n_t,))
        grid, _ = _normalize_power(x, 1)
    else:
        x = reals_to_complex(out, (cfg.n_fft, cfg.n_ch))
        grid, _ = _normalize_power(x, 2)
    return grid


def decode(model: AeModel, rx, rng=None) -> np.ndarray:
    """Received symbols -> bit probabilities in (0, 1)."""
    cfg = model.cfg
    n_axes = 1 if cfg.n_t > 1 else 2
    rx = np.asarray(rx)
    v = complex_to_reals(rx, n_axes)
    if v.shape[-1] != model.decoder.n_in:
        raise ConfigError(
            f"received shape {rx.shape} does not match decoder input {model.decoder.n_in}"
        )
    probs, _ = nn.net_forward(model.decoder, v, rng)
    return probs


def hard_bits(probs) -> np.ndarray:
    """Threshold probabilities at 0.5."""
    return (np.asarray(probs) > 0.5).astype(np.int8)


def _spawn_streams(rng):
    """Fixed stream order so disabling one stage never shifts the others."""
    enc_drop, chan, noise, jam, dec_drop = rng.spawn(5)
    return enc_drop, chan, noise, jam, dec_drop


def siso_channel(tx_grid, cfg: LinkConfig, ch: ChannelParams,
                 jam: JammerParams | None, rng_noise, rng_jam):
    """OFDM + channel + receive FFT + jammer for a normalized transmit grid.

    Returns (rx_grid, rot) where ``rot`` is the per-sample rotation factor
    (needed by the analytic adjoint). The jammer energy is referenced to the
    clean normalized grid, which carries exactly n_fft units per channel use.
    """
    payload = np.fft.ifft(tx_grid, axis=-2, norm="ortho")
    if cfg.n_cp:
        tx_time = np.concatenate([payload[..., cfg.n_fft - cfg.n_cp:, :], payload], axis=-2)
    else:
        tx_time = payload

    if ch.impairments_enabled:
        rot = np.exp(1j * sample_phases(tx_time.shape, ch))
    else:
        rot = np.ones((1, 1))
    ch_time = tx_time * rot
    if not np.isinf(ch.snr_db):
        p_sig = np.mean(np.abs(ch_time) ** 2)
        scale = np.sqrt(p_sig / 10.0 ** (ch.snr_db / 10.0) / 2.0)
        ch_time = ch_time + scale * (
            rng_noise.standard_normal(ch_time.shape)
            + 1j * rng_noise.standard_normal(ch_time.shape)
        )

    rx_grid = np.fft.fft(ch_time[..., cfg.n_cp:, :], axis=-2, norm="ortho")
    if jam is not None and jam.enabled:
        from .phy import inject_interference
        rx_grid = inject_interference(rx_grid, jam, rng_jam,
                                      signal_energy_per_use=float(cfg.n_fft))
    return rx_grid, rot


def pipeline_forward(model: AeModel, bits, ch: ChannelParams,
                     jam: JammerParams | None, rng, h=None):
    """Full transmit-channel-receive pass; returns (PipelineTrace, ctx).

    ``ctx`` carries everything :func:`pipeline_backward` needs to propagate a
    loss gradient from the bit probabilities back to both subnets. For
    multi-antenna configs ``h`` is the spatial channel matrix ``(n_r, n_t)``
    (or one per frame, ``(..., n_r, n_t)``); pass None to redraw an i.i.d.
    unit-variance complex Gaussian matrix per frame.
    """
    cfg = model.cfg
    bits = np.asarray(bits, dtype=np.float64)
    if bits.shape[-1] != cfg.bits_per_frame:
        raise ConfigError(
            f"bit block length {bits.shape[-1]} != expected {cfg.bits_per_frame}"
        )
    rng_enc, rng_chan, rng_noise, rng_jam, rng_dec = _spawn_streams(rng)

    enc_out, enc_caches = nn.net_forward(model.encoder, bits, rng_enc)
    if cfg.n_t > 1:
        return _mimo_pipeline(model, bits, enc_out, enc_caches, ch, jam,
                              rng_chan, rng_noise, rng_jam, rng_dec, h)

    x = reals_to_complex(enc_out, (cfg.n_fft, cfg.n_ch))
    tx_grid, s = _normalize_power(x, 2)
    rx_grid, rot = siso_channel(tx_grid, cfg, ch, jam, rng_noise, rng_jam)
    dec_in = complex_to_reals(rx_grid, 2)
    probs, dec_caches = nn.net_forward(model.decoder, dec_in, rng_dec)

    trace = PipelineTrace(tx_grid=tx_grid, rx_grid=rx_grid, bit_probs=probs)
    ctx = {"kind": "siso", "enc_caches": enc_caches, "dec_caches": dec_caches,
           "tx_grid": tx_grid, "s": s, "rot": rot, "cfg": cfg}
    return trace, ctx


def draw_rayleigh_h(n_r: int, n_t: int, rng, lead: tuple = ()) -> np.ndarray:
    """i.i.d. unit-variance complex Gaussian spatial channel matrix."""
    shape = lead + (n_r, n_t)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _mimo_pipeline(model, bits, enc_out, enc_caches, ch, jam,
                   rng_chan, rng_noise, rng_jam, rng_dec, h):
    """One-symbol-per-pass spatial pipeline for n_t > 1."""
    cfg = model.cfg
    x = reals_to_complex(enc_out, (cfg.n_t,))
    tx, s = _normalize_power(x, 1)

    if h is None:
        h_use = draw_rayleigh_h(cfg.n_r, cfg.n_t, rng_chan, lead=tx.shape[:-1])
    else:
        h_use = np.asarray(h, dtype=np.complex128)
        if h_use.shape[-2:] != (cfg.n_r, cfg.n_t):
            raise ConfigError(f"H shape {h_use.shape} != (n_r, n_t)")

    from .phy import mimo_symbol_channel
    y, rot, h_use = mimo_symbol_channel(tx, h_use, ch, jam, rng_noise, rng_jam)

    dec_in = complex_to_reals(y, 1)
    probs, dec_caches = nn.net_forward(model.decoder, dec_in, rng_dec)
    trace = PipelineTrace(tx_grid=tx, rx_grid=y, bit_probs=probs)
    ctx = {"kind": "mimo", "enc_caches": enc_caches, "dec_caches": dec_caches,
           "tx_grid": tx, "s": s, "rot": rot, "h": h_use, "cfg": cfg}
    return trace, ctx


def pipeline_backward(model: AeModel, ctx, grad_probs):
    """Propagate d(loss)/d(bit_probs) to (encoder_grads, decoder_grads).

    Channel rotation, noise, jammer and H draws are constants of the pass;
    the complex-affine stages use their exact adjoints (conjugate transpose
    under the I/Q gradient packing g = dL/dI + j dL/dQ).
    """
    cfg = ctx["cfg"]
    dec_grads, g_dec_in = nn.net_backward(model.decoder, ctx["dec_caches"], grad_probs)

    if ctx["kind"] == "mimo":
        g = reals_to_complex(g_dec_in, (cfg.n_r,))
        g = g * np.conj(ctx["rot"])
        g = np.einsum("...rt,...r->...t", np.conj(ctx["h"]), g)
        g = _normalize_backward(g, ctx["tx_grid"], ctx["s"], 1)
        g_enc_out = complex_to_reals(g, 1)
    else:
        g = reals_to_complex(g_dec_in, (cfg.n_fft, cfg.n_ch))
        # adjoint of CP strip + unitary FFT
        g_time = np.fft.ifft(g, axis=-2, norm="ortho")
        if cfg.n_cp:
            pad = np.zeros(g_time.shape[:-2] + (cfg.n_cp, cfg.n_ch), dtype=np.complex128)
            g_time = np.concatenate([pad, g_time], axis=-2)
        g_time = g_time * np.conj(ctx["rot"])
        # adjoint of IFFT + CP prepend
        if cfg.n_cp:
            g_payload = g_time[..., cfg.n_cp:, :].copy()
            g_payload[..., cfg.n_fft - cfg.n_cp:, :] += g_time[..., : cfg.n_cp, :]
        else:
            g_payload = g_time
        g = np.fft.fft(g_payload, axis=-2, norm="ortho")
        g = _normalize_backward(g, ctx["tx_grid"], ctx["s"], 2)
        g_enc_out = complex_to_reals(g, 2)

    enc_grads, _ = nn.net_backward(model.encoder, ctx["enc_caches"], g_enc_out)
    return enc_grads, dec_grads


def end_to_end(model: AeModel, bits, ch: ChannelParams,
               jam: JammerParams | None, rng, h=None) -> PipelineTrace:
    """Run the full pipeline and return its trace (no gradients kept)."""
    trace, _ = pipeline_forward(model, bits, ch, jam, rng, h=h)
    return trace


def measure_ber(model: AeModel, ch: ChannelParams, jam: JammerParams | None,
                n_bits: int, rng, h=None, batch_frames: int = 4096,
                min_errors: int | None = None) -> tuple:
    """Monte Carlo hard-decision BER of the model in eval mode.

    Runs batches of random frames until ``n_bits`` is reached, or earlier if
    ``min_errors`` is set and that many bit errors have accumulated. Returns
    (ber, bits_counted, errors).
    """
    cfg = model.cfg
    bpf = cfg.bits_per_frame
    mode_enc, mode_dec = model.encoder.mode, model.decoder.mode
    model.eval()
    try:
        errors = 0
        counted = 0
        while counted < n_bits:
            n = min(batch_frames, -(-(n_bits - counted) // bpf))
            bits = rng.integers(0, 2, size=(n, bpf)).astype(np.float64)
            trace = end_to_end(model, bits, ch, jam, rng, h=h)
            errors += int(np.sum(hard_bits(trace.bit_probs) != bits))
            counted += n * bpf
            if min_errors is not None and errors >= min_errors:
                break
        return errors / counted, counted, errors
    finally:
        model.encoder.mode = mode_enc
        model.decoder.mode = mode_dec
