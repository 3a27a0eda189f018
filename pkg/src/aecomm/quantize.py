"""Post-training dynamic 8-bit quantization and model-size accounting.

Linear weights get a per-tensor affine int8 code (round-half-to-even);
biases stay 32-bit. At inference time each linear layer's input activations
are quantized on the fly from their own min/max, the multiply-accumulate
runs in exact integer arithmetic, and the result is dequantized before the
(real-valued) nonlinearity. Accumulation is carried in float64, which
represents these integer sums exactly (|sum| < 2^53), i.e. it is bit-exact
integer accumulation at BLAS speed.

Size accounting: 4 bytes per parameter for float models; 1 byte per weight,
4 bytes per bias entry and 8 bytes of metadata (f32 scale + i32 zero point)
per quantized tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import nn
from .errors import ConfigError
from .link import (AeModel, complex_to_reals, draw_rayleigh_h, hard_bits,
                   reals_to_complex, siso_channel, _normalize_power)
from .phy import ChannelParams, JammerParams, LinkConfig, mimo_symbol_channel

SCALE_FLOOR = 1e-12


@dataclass
class QuantTensor:
    values: np.ndarray      # int8, original shape
    scale: float            # canonically float32-rounded
    zero_point: int
    shape: tuple

    def dequantize(self) -> np.ndarray:
        return self.scale * (self.values.astype(np.float64) - self.zero_point)


def _affine_params(lo: float, hi: float):
    scale = max((hi - lo) / 255.0, SCALE_FLOOR)
    scale = float(np.float32(scale))
    zp = int(np.clip(np.rint(-lo / scale) - 128, -128, 127))
    return scale, zp


def quantize_tensor(t: np.ndarray) -> QuantTensor:
    """Per-tensor affine int8 code with max round-trip error <= scale/2."""
    t = np.asarray(t, dtype=np.float64)
    if not np.isfinite(t).all():
        raise ConfigError("cannot quantize non-finite tensor")
    scale, zp = _affine_params(float(t.min()), float(t.max()))
    q = np.clip(np.rint(t / scale) + zp, -128, 127).astype(np.int8)
    return QuantTensor(values=q, scale=scale, zero_point=zp, shape=t.shape)


@dataclass
class QuantLinear:
    weight: QuantTensor     # (n_in, n_out)
    bias: np.ndarray        # float32

    kind = "qlinear"

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class QuantizedNet:
    """DenseNet mirror with int8 linear layers; inference is eval-mode only."""

    layers: list

    @property
    def n_in(self) -> int:
        return next(l.n_in for l in self.layers if isinstance(l, QuantLinear))


@dataclass
class QuantizedModel:
    encoder: QuantizedNet
    decoder: QuantizedNet
    cfg: LinkConfig


def _quantize_net(net: nn.DenseNet) -> QuantizedNet:
    layers = []
    for layer in net.layers:
        if isinstance(layer, nn.Linear):
            layers.append(QuantLinear(
                weight=quantize_tensor(layer.weight),
                bias=layer.bias.astype(np.float32),
            ))
        else:
            layers.append(layer)
    return QuantizedNet(layers)


def quantize_model(model: AeModel) -> QuantizedModel:
    """Quantize every linear weight tensor of both subnets."""
    return QuantizedModel(
        encoder=_quantize_net(model.encoder),
        decoder=_quantize_net(model.decoder),
        cfg=model.cfg,
    )


def _quantize_rows(x: np.ndarray):
    """Dynamic per-row activation quantization: (q_int8, scale, zp) per row."""
    lo = x.min(axis=-1, keepdims=True)
    hi = x.max(axis=-1, keepdims=True)
    scale = np.maximum((hi - lo) / 255.0, SCALE_FLOOR).astype(np.float32).astype(np.float64)
    zp = np.clip(np.rint(-lo / scale) - 128, -128, 127)
    q = np.clip(np.rint(x / scale) + zp, -128, 127)
    return q, scale, zp


def quantized_forward(qnet: QuantizedNet, x) -> np.ndarray:
    """Run the quantized layer stack (dropout is identity at inference)."""
    x = np.asarray(x, dtype=np.float64)
    was_vector = x.ndim == 1
    if was_vector:
        x = x[None, :]
    for i, layer in enumerate(qnet.layers):
        if isinstance(layer, QuantLinear):
            if x.shape[1] != layer.n_in:
                raise ConfigError(
                    f"layer {i}: input width {x.shape[1]} != expected {layer.n_in}"
                )
            qa, s_a, z_a = _quantize_rows(x)
            qw = layer.weight.values.astype(np.float64)
            z_w = layer.weight.zero_point
            n = layer.n_in
            acc = qa @ qw
            acc -= z_a * qw.sum(axis=0)
            acc -= z_w * qa.sum(axis=1, keepdims=True)
            acc += n * z_a * z_w
            x = (s_a * layer.weight.scale) * acc + layer.bias.astype(np.float64)
        elif isinstance(layer, nn.ReLU):
            x = np.maximum(x, 0.0)
        elif isinstance(layer, nn.LeakyReLU):
            x = np.where(x > 0.0, x, layer.slope * x)
        elif isinstance(layer, nn.Sigmoid):
            x = expit(x)
        elif isinstance(layer, nn.Dropout):
            pass
        else:
            raise ConfigError(f"unknown layer kind at index {i}: {layer!r}")
    return x[0] if was_vector else x


def model_size_bytes(model) -> int:
    """Serialized parameter bytes under the documented accounting."""
    if isinstance(model, AeModel):
        nets = (model.encoder, model.decoder)
        total = 0
        for net in nets:
            for layer in net.layers:
                if isinstance(layer, nn.Linear):
                    total += 4 * (layer.weight.size + layer.bias.size)
        return total
    if isinstance(model, QuantizedModel):
        total = 0
        for net in (model.encoder, model.decoder):
            for layer in net.layers:
                if isinstance(layer, QuantLinear):
                    total += layer.weight.values.size      # 1 byte per weight
                    total += 4 * layer.bias.size
                    total += 8                             # scale + zero point
        return total
    raise ConfigError(f"unsupported model type: {type(model)!r}")


def quantized_end_to_end(qmodel: QuantizedModel, bits, ch: ChannelParams,
                         jam: JammerParams | None, rng, h=None):
    """Full link pass with quantized encoder and decoder.

    Uses the same randomness stream layout as the float pipeline, so running
    both with identically seeded generators exposes them to identical
    channel, jammer and H draws.
    """
    cfg = qmodel.cfg
    bits = np.asarray(bits, dtype=np.float64)
    _, rng_chan, rng_noise, rng_jam, _ = rng.spawn(5)
    enc_out = quantized_forward(qmodel.encoder, bits)
    if cfg.n_t > 1:
        x = reals_to_complex(enc_out, (cfg.n_t,))
        tx, _ = _normalize_power(x, 1)
        h_use = draw_rayleigh_h(cfg.n_r, cfg.n_t, rng_chan, lead=tx.shape[:-1]) \
            if h is None else np.asarray(h, dtype=np.complex128)
        y, _, _ = mimo_symbol_channel(tx, h_use, ch, jam, rng_noise, rng_jam)
        dec_in = complex_to_reals(y, 1)
    else:
        x = reals_to_complex(enc_out, (cfg.n_fft, cfg.n_ch))
        tx, _ = _normalize_power(x, 2)
        rx_grid, _ = siso_channel(tx, cfg, ch, jam, rng_noise, rng_jam)
        dec_in = complex_to_reals(rx_grid, 2)
    return quantized_forward(qmodel.decoder, dec_in)


def measure_ber_quantized(qmodel: QuantizedModel, ch: ChannelParams,
                          jam: JammerParams | None, n_bits: int, rng,
                          h=None, batch_frames: int = 4096) -> float:
    bpf = qmodel.cfg.bits_per_frame
    errors = 0
    counted = 0
    while counted < n_bits:
        n = min(batch_frames, -(-(n_bits - counted) // bpf))
        bits = rng.integers(0, 2, size=(n, bpf)).astype(np.float64)
        probs = quantized_end_to_end(qmodel, bits, ch, jam, rng, h=h)
        errors += int(np.sum(hard_bits(probs) != bits))
        counted += n * bpf
    return errors / counted


def ber_comparison(model: AeModel, qmodel: QuantizedModel, ch_template: ChannelParams,
                   jam: JammerParams | None, snr_grid_db, n_bits: int, seed: int,
                   h=None):
    """Float vs quantized BER on identical channel draws, per SNR point.

    Returns rows of (snr_db, ber_float, ber_quant).
    """
    from dataclasses import replace

    from .link import measure_ber
    from .seeding import STREAM_SWEEP, derive

    rows = []
    for i, snr in enumerate(snr_grid_db):
        ch = replace(ch_template, snr_db=float(snr))
        ber_f, _, _ = measure_ber(model, ch, jam, n_bits, derive(seed, STREAM_SWEEP, i), h=h)
        ber_q = measure_ber_quantized(qmodel, ch, jam, n_bits,
                                      derive(seed, STREAM_SWEEP, i), h=h)
        rows.append((float(snr), ber_f, ber_q))
    return rows


def time_inference(model, batch_size: int = 50, n_runs: int = 200, seed: int = 0):
    """Wall-clock seconds per sample for one decoder+encoder pass.

    A measurement convenience only; timings are hardware-dependent and
    carry no acceptance bound.
    """
    import time

    rng = np.random.default_rng(seed)
    if isinstance(model, QuantizedModel):
        enc_fwd = lambda b: quantized_forward(model.encoder, b)
        dec_fwd = lambda v: quantized_forward(model.decoder, v)
        enc_in = model.encoder.n_in
        dec_in = model.decoder.n_in
    else:
        model.eval()
        enc_fwd = lambda b: nn.net_forward(model.encoder, b)[0]
        dec_fwd = lambda v: nn.net_forward(model.decoder, v)[0]
        enc_in = model.encoder.n_in
        dec_in = model.decoder.n_in
    bits = rng.integers(0, 2, size=(batch_size, enc_in)).astype(np.float64)
    rx = rng.standard_normal((batch_size, dec_in))
    enc_fwd(bits), dec_fwd(rx)  # warm up
    t0 = time.perf_counter()
    for _ in range(n_runs):
        enc_fwd(bits)
        dec_fwd(rx)
    dt = time.perf_counter() - t0
    return dt / (n_runs * batch_size)
