"""End-to-end training: regular, interference, and smoothing loss terms.

One optimizer step per batch combines up to three loss contributions:

* the regular term: mean BCE of the clean-channel pipeline;
* the interference term: mean BCE over ``n_it`` fresh jammer realizations;
* the smoothing term: mean BCE over ``n_rs`` realizations with zero-mean
  Gaussian noise added to the encoder input bits (no clipping).

The total is their unweighted sum; terms with a zero realization count
contribute exactly zero. Determinism: every random draw comes from a
generator derived from (cfg.seed, stream, epoch, batch, realization), so a
seed reproduces the whole trajectory bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, seeding
from .errors import ConfigError, NumericsError
from .link import AeModel, measure_ber, pipeline_backward, pipeline_forward
from .phy import ChannelParams, JammerParams


def _default_jammer() -> JammerParams:
    return JammerParams(enabled=True, jsr_db=15.0, n_jam_symbols=1)


@dataclass
class TrainConfig:
    """Hyperparameters for one training run.

    The defaults equip the full robust recipe (one interference and one
    smoothing realization per batch); set ``n_it=0, n_rs=0, train_jam=None``
    for plain end-to-end training.
    """

    n_ep: int = 50
    n_batches: int = 64
    batch_size: int = 256
    n_it: int = 1
    n_rs: int = 1
    sigma: float = 0.1
    train_jam: JammerParams | None = field(default_factory=_default_jammer)
    ch: ChannelParams = field(default_factory=ChannelParams)
    seed: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    val_bits: int = 100_000

    def __post_init__(self):
        if min(self.n_ep, self.n_batches, self.batch_size) < 1:
            raise ConfigError("n_ep, n_batches and batch_size must be >= 1")
        if self.n_it < 0 or self.n_rs < 0:
            raise ConfigError("realization counts must be >= 0")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.n_it > 0 and self.train_jam is None:
            raise ConfigError("interference training (n_it > 0) needs train_jam")


@dataclass
class TrainHistory:
    loss_ae: list = field(default_factory=list)
    loss_it: list = field(default_factory=list)
    loss_rs: list = field(default_factory=list)
    loss_total: list = field(default_factory=list)
    val_ber: list = field(default_factory=list)

    def rows(self):
        for i in range(len(self.loss_total)):
            yield (i, self.loss_ae[i], self.loss_it[i], self.loss_rs[i],
                   self.loss_total[i], self.val_ber[i])


def _run_term(model, enc_in, target_bits, ch, jam, rng, h):
    trace, ctx = pipeline_forward(model, enc_in, ch, jam, rng, h=h)
    loss, gprobs = nn.bce_loss(trace.bit_probs, target_bits)
    enc_g, dec_g = pipeline_backward(model, ctx, gprobs)
    return loss, enc_g + dec_g


def _accumulate(total, part, weight):
    if total is None:
        return [weight * g for g in part]
    for t, g in zip(total, part):
        t += weight * g
    return total


def loss_regular(model: AeModel, bits, ch: ChannelParams, rng, h=None):
    """Clean-channel BCE over the batch; returns (loss, gradient list)."""
    child = rng.spawn(1)[0]
    return _run_term(model, bits, bits, ch, None, child, h)


def loss_interference(model: AeModel, bits, ch: ChannelParams,
                      train_jam: JammerParams, n_it: int, rng, h=None):
    """Mean BCE over ``n_it`` independent jammer realizations."""
    if train_jam is None:
        raise ConfigError("interference loss needs a training jammer")
    if n_it < 1:
        raise ConfigError("n_it must be >= 1")
    children = rng.spawn(n_it)
    total_loss = 0.0
    grads = None
    for child in children:
        loss, g = _run_term(model, bits, bits, ch, train_jam, child, h)
        total_loss += loss / n_it
        grads = _accumulate(grads, g, 1.0 / n_it)
    return total_loss, grads


def loss_smoothing(model: AeModel, bits, ch: ChannelParams,
                   sigma: float, n_rs: int, rng, h=None):
    """Mean BCE over ``n_rs`` Gaussian input perturbations of the bits.

    Each realization adds i.i.d. N(0, sigma^2) noise to every encoder input
    bit (perturbed values are not clipped); the BCE target stays the clean
    bit block.
    """
    if n_rs < 1:
        raise ConfigError("n_rs must be >= 1")
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    bits = np.asarray(bits, dtype=np.float64)
    children = rng.spawn(n_rs)
    total_loss = 0.0
    grads = None
    for child in children:
        noisy = bits + child.normal(0.0, sigma, size=bits.shape)
        loss, g = _run_term(model, noisy, bits, ch, None, child, h)
        total_loss += loss / n_rs
        grads = _accumulate(grads, g, 1.0 / n_rs)
    return total_loss, grads


def loss_total(model: AeModel, bits, cfg: TrainConfig, rng, h=None):
    """Unweighted sum of the enabled terms; returns (total, parts, grads)."""
    rng_ae, rng_it, rng_rs = rng.spawn(3)
    l_ae, grads = loss_regular(model, bits, cfg.ch, rng_ae, h=h)
    l_it = 0.0
    l_rs = 0.0
    if cfg.n_it > 0:
        l_it, g = loss_interference(model, bits, cfg.ch, cfg.train_jam,
                                    cfg.n_it, rng_it, h=h)
        grads = _accumulate(grads, g, 1.0)
    if cfg.n_rs > 0:
        l_rs, g = loss_smoothing(model, bits, cfg.ch, cfg.sigma,
                                 cfg.n_rs, rng_rs, h=h)
        grads = _accumulate(grads, g, 1.0)
    return l_ae + l_it + l_rs, (l_ae, l_it, l_rs), grads


def train(model: AeModel, cfg: TrainConfig, h=None):
    """Epoch/batch loop with one Adam update per batch.

    Mutates ``model`` in place and returns (model, TrainHistory). Per epoch
    the history records the epoch-mean of each loss component and a
    validation BER measured with dropout off on the jam-free channel.
    ``h`` pins the spatial channel for multi-antenna configs.
    """
    model.train()
    params = nn.net_params(model.encoder) + nn.net_params(model.decoder)
    state = nn.adam_init(params, alpha=cfg.alpha, beta1=cfg.beta1,
                         beta2=cfg.beta2, epsilon=cfg.epsilon)
    history = TrainHistory()
    bpf = model.cfg.bits_per_frame

    for epoch in range(cfg.n_ep):
        sums = np.zeros(4)
        for batch in range(cfg.n_batches):
            rng_bits = seeding.derive(cfg.seed, seeding.STREAM_BITS, epoch, batch)
            bits = rng_bits.integers(0, 2, size=(cfg.batch_size, bpf)).astype(np.float64)
            rng_loss = seeding.derive(cfg.seed, seeding.STREAM_PIPELINE, epoch, batch)
            total, (l_ae, l_it, l_rs), grads = loss_total(model, bits, cfg, rng_loss, h=h)
            if not np.isfinite(total):
                raise NumericsError(
                    f"non-finite loss at epoch {epoch} batch {batch}"
                )
            nn.adam_step(state, params, grads)
            sums += (l_ae, l_it, l_rs, total)
        means = sums / cfg.n_batches
        rng_val = seeding.derive(cfg.seed, seeding.STREAM_VALIDATE, epoch)
        val_ber, _, _ = measure_ber(model, cfg.ch, None, cfg.val_bits, rng_val, h=h)
        model.train()
        history.loss_ae.append(float(means[0]))
        history.loss_it.append(float(means[1]))
        history.loss_rs.append(float(means[2]))
        history.loss_total.append(float(means[3]))
        history.val_ber.append(float(val_ber))
    model.eval()
    return model, history
