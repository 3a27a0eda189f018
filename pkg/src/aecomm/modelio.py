"""Binary persistence for models and frame datasets.

Model container (all integers little-endian):

    magic   4 bytes  b"AECM"
    version u16      1
    payload u8       0 = float32 weights, 1 = int8 quantized weights
    kind    u8       0 = autoencoder (encoder+decoder), 1 = GAN (generator+critic)
    config  7 x u32  n_fft, n_cp, k, n_ch, hidden, n_t, n_r
    extra   2 x u32  kind-specific: (z_dim, cond_dim) for GAN, (0, 0) for AE
    nets    u8       net count (always 2), then per net:
        u32 layer count, then per layer a record:
            tag u8: 0 linear, 1 relu, 2 dropout, 3 sigmoid, 4 leaky_relu
            linear:     u32 n_in, u32 n_out, weights, bias f32[n_out]
                        float payload: f32[n_in*n_out] row-major
                        int8 payload:  f32 scale, i32 zero_point, i8[n_in*n_out]
            dropout:    f32 rate
            leaky_relu: f32 slope

Dataset container:

    magic   4 bytes  b"AEDS"
    version u16      1
    count   u32      frames
    n_bits  u32      condition bits per frame
    n_reals u32      I/Q-interleaved reals per frame
    frames  per frame: packed condition bits (ceil(n_bits/8) bytes,
            numpy bit order), then f32[n_reals]

Weights are serialized at 32-bit precision (the in-memory engine runs at
64-bit); save -> load -> save therefore reproduces files byte-for-byte.
"""

from __future__ import annotations

import struct

import numpy as np

from . import nn
from .errors import FormatError
from .gan import GanConfig, GanPair
from .link import AeModel
from .phy import LinkConfig
from .quantize import QuantLinear, QuantTensor, QuantizedModel, QuantizedNet

MODEL_MAGIC = b"AECM"
DATASET_MAGIC = b"AEDS"
VERSION = 1

_TAG_LINEAR, _TAG_RELU, _TAG_DROPOUT, _TAG_SIGMOID, _TAG_LEAKY = range(5)
_KIND_AE, _KIND_GAN = 0, 1


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated at offset {self.off} (wanted {n} bytes)"
            )
        out = self.data[self.off: self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def _write_net(chunks: list, net, quantized: bool):
    layers = net.layers
    chunks.append(struct.pack("<I", len(layers)))
    for layer in layers:
        if isinstance(layer, (nn.Linear, QuantLinear)):
            chunks.append(struct.pack("<BII", _TAG_LINEAR, layer.n_in, layer.n_out))
            if quantized:
                qt = layer.weight
                chunks.append(struct.pack("<fi", qt.scale, qt.zero_point))
                chunks.append(qt.values.astype("<i1").tobytes())
                chunks.append(np.asarray(layer.bias, dtype="<f4").tobytes())
            else:
                chunks.append(np.asarray(layer.weight, dtype="<f4").tobytes())
                chunks.append(np.asarray(layer.bias, dtype="<f4").tobytes())
        elif isinstance(layer, nn.ReLU):
            chunks.append(struct.pack("<B", _TAG_RELU))
        elif isinstance(layer, nn.Dropout):
            chunks.append(struct.pack("<Bf", _TAG_DROPOUT, layer.rate))
        elif isinstance(layer, nn.Sigmoid):
            chunks.append(struct.pack("<B", _TAG_SIGMOID))
        elif isinstance(layer, nn.LeakyReLU):
            chunks.append(struct.pack("<Bf", _TAG_LEAKY, layer.slope))
        else:
            raise FormatError(f"cannot serialize layer {type(layer).__name__}")


def _read_net(r: _Reader, quantized: bool):
    (n_layers,) = r.unpack("I")
    layers = []
    for _ in range(n_layers):
        (tag,) = r.unpack("B")
        if tag == _TAG_LINEAR:
            n_in, n_out = r.unpack("II")
            if quantized:
                scale, zp = r.unpack("fi")
                vals = np.frombuffer(r.take(n_in * n_out), dtype="<i1")
                bias = np.frombuffer(r.take(4 * n_out), dtype="<f4")
                layers.append(QuantLinear(
                    weight=QuantTensor(values=vals.reshape(n_in, n_out).copy(),
                                       scale=float(scale), zero_point=int(zp),
                                       shape=(n_in, n_out)),
                    bias=bias.copy(),
                ))
            else:
                w = np.frombuffer(r.take(4 * n_in * n_out), dtype="<f4")
                b = np.frombuffer(r.take(4 * n_out), dtype="<f4")
                layers.append(nn.Linear(w.reshape(n_in, n_out).astype(np.float64),
                                        b.astype(np.float64)))
        elif tag == _TAG_RELU:
            layers.append(nn.ReLU())
        elif tag == _TAG_DROPOUT:
            (rate,) = r.unpack("f")
            layers.append(nn.Dropout(float(rate)))
        elif tag == _TAG_SIGMOID:
            layers.append(nn.Sigmoid())
        elif tag == _TAG_LEAKY:
            (slope,) = r.unpack("f")
            layers.append(nn.LeakyReLU(float(slope)))
        else:
            raise FormatError(f"{r.path}: unknown layer tag {tag} at offset {r.off - 1}")
    if quantized:
        return QuantizedNet(layers)
    return nn.DenseNet(layers, mode="eval")


def _cfg_words(cfg: LinkConfig):
    return (cfg.n_fft, cfg.n_cp, cfg.k, cfg.n_ch, cfg.hidden, cfg.n_t, cfg.n_r)


def save_model(model, path: str) -> None:
    """Serialize an AeModel, QuantizedModel or GanPair."""
    quantized = isinstance(model, QuantizedModel)
    is_gan = isinstance(model, GanPair)
    chunks = [MODEL_MAGIC, struct.pack("<HBB", VERSION, int(quantized),
                                       _KIND_GAN if is_gan else _KIND_AE)]
    if is_gan:
        chunks.append(struct.pack("<7I", 0, 0, 0, 0, 0, 0, 0))
        chunks.append(struct.pack("<II", model.z_dim, model.cond_dim))
        chunks.append(struct.pack("<B", 2))
        _write_net(chunks, model.generator, False)
        _write_net(chunks, model.critic, False)
    else:
        chunks.append(struct.pack("<7I", *_cfg_words(model.cfg)))
        chunks.append(struct.pack("<II", 0, 0))
        chunks.append(struct.pack("<B", 2))
        _write_net(chunks, model.encoder, quantized)
        _write_net(chunks, model.decoder, quantized)
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_model(path: str):
    """Load whatever :func:`save_model` wrote; returns the matching type."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    magic = r.take(4)
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    version, payload, kind = r.unpack("HBB")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    if payload not in (0, 1):
        raise FormatError(f"{path}: bad payload flag {payload} at offset 6")
    cfg_words = r.unpack("7I")
    z_dim, cond_dim = r.unpack("II")
    (n_nets,) = r.unpack("B")
    if n_nets != 2:
        raise FormatError(f"{path}: expected 2 nets, found {n_nets}")
    quantized = payload == 1
    a = _read_net(r, quantized)
    b = _read_net(r, quantized)
    if r.off != len(r.data):
        raise FormatError(f"{path}: {len(r.data) - r.off} trailing bytes at offset {r.off}")
    if kind == _KIND_GAN:
        frame_dim = next(l.n_out for l in reversed(a.layers) if isinstance(l, nn.Linear))
        return GanPair(a, b, z_dim=z_dim, cond_dim=cond_dim, frame_dim=frame_dim)
    cfg = LinkConfig(*map(int, cfg_words))
    if quantized:
        return QuantizedModel(encoder=a, decoder=b, cfg=cfg)
    return AeModel(encoder=a, decoder=b, cfg=cfg)


def save_dataset(bits: np.ndarray, frames: np.ndarray, path: str) -> None:
    """Write (condition bits, I/Q-interleaved frame reals) pairs."""
    bits = np.asarray(bits)
    frames = np.asarray(frames)
    if bits.shape[0] != frames.shape[0]:
        raise FormatError("bits and frames must pair up")
    n, n_bits = bits.shape
    n_reals = frames.shape[1]
    chunks = [DATASET_MAGIC, struct.pack("<HIII", VERSION, n, n_bits, n_reals)]
    for i in range(n):
        chunks.append(np.packbits(bits[i].astype(np.uint8)).tobytes())
        chunks.append(np.asarray(frames[i], dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_dataset(path: str):
    """Returns (bits (n, n_bits) float64, frames (n, n_reals) float64)."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    magic = r.take(4)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    version, n, n_bits, n_reals = r.unpack("HIII")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    packed_len = -(-n_bits // 8)
    bits = np.empty((n, n_bits), dtype=np.float64)
    frames = np.empty((n, n_reals), dtype=np.float64)
    for i in range(n):
        packed = np.frombuffer(r.take(packed_len), dtype=np.uint8)
        bits[i] = np.unpackbits(packed)[:n_bits]
        frames[i] = np.frombuffer(r.take(4 * n_reals), dtype="<f4")
    if r.off != len(r.data):
        raise FormatError(f"{path}: {len(r.data) - r.off} trailing bytes at offset {r.off}")
    return bits, frames


def gan_config_for(pair: GanPair) -> GanConfig:
    """Minimal config describing a loaded pair (z dimension only)."""
    return GanConfig(z_dim=pair.z_dim)
