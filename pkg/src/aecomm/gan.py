"""Conditional WGAN-GP for received-frame augmentation.

The generator maps [latent z, condition bits] to a synthetic received
time-domain frame (I/Q interleaved reals, cyclic prefix included). The
critic scores [frame, critic-condition] pairs; for the link use case the
critic condition is the clean transmitted time frame for the same bits,
making its input exactly two frames wide.

The gradient penalty needs d/d(theta) of the critic's input-gradient norm.
Because the critic is piecewise linear (linear / ReLU / LeakyReLU / dropout
only), the activation pattern is locally constant and the double-backward
pass reduces to one extra linear sweep through the transposed network; see
:func:`_critic_input_grad`/:func:`_critic_double_back`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn, seeding
from .errors import ConfigError, NumericsError
from .link import AeModel, complex_to_reals, encode, siso_channel
from .phy import ChannelParams, LinkConfig

CRITIC_WIDTH = 64
CRITIC_DROPOUT = 0.4
LEAKY_SLOPE = 0.2
GEN_WIDTH = 800


@dataclass
class GanConfig:
    z_dim: int = 20
    lambda_gp: float = 10.0
    critic_iters: int = 5
    alpha: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    epochs: int = 400
    batch_size: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.z_dim < 1:
            raise ConfigError("z_dim must be >= 1")
        if self.lambda_gp < 0:
            raise ConfigError("lambda_gp must be >= 0")
        if self.critic_iters < 1:
            raise ConfigError("critic_iters must be >= 1")


@dataclass
class GanPair:
    generator: nn.DenseNet
    critic: nn.DenseNet
    z_dim: int
    cond_dim: int          # generator condition width (bits)
    frame_dim: int         # sample width

    def eval(self) -> "GanPair":
        self.generator.eval()
        self.critic.eval()
        return self


@dataclass
class GanDataset:
    """Real frames with the two condition views used in training."""

    frames: np.ndarray       # (N, frame_dim)
    gen_cond: np.ndarray     # (N, cond_dim) bits fed to the generator
    critic_cond: np.ndarray  # (N, c) extra critic input (clean tx frame)

    def __post_init__(self):
        n = self.frames.shape[0]
        if self.gen_cond.shape[0] != n or self.critic_cond.shape[0] != n:
            raise ConfigError("dataset arrays must share the leading size")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class GanHistory:
    critic_loss: list = field(default_factory=list)
    gen_loss: list = field(default_factory=list)
    gp: list = field(default_factory=list)


def build_wgan(link_cfg: LinkConfig, gan_cfg: GanConfig, rng) -> GanPair:
    """Generator 20+bits -> 800 -> 800 -> frame; critic 2*frame -> 64^3 -> 1."""
    frame_dim = 2 * link_cfg.n_samp * link_cfg.n_ch
    cond_dim = link_cfg.k * link_cfg.n_fft
    gen = nn.DenseNet([
        nn.Linear.glorot(gan_cfg.z_dim + cond_dim, GEN_WIDTH, rng),
        nn.ReLU(),
        nn.Linear.glorot(GEN_WIDTH, GEN_WIDTH, rng),
        nn.ReLU(),
        nn.Linear.glorot(GEN_WIDTH, frame_dim, rng),
    ])
    critic = nn.DenseNet([
        nn.Linear.glorot(2 * frame_dim, CRITIC_WIDTH, rng),
        nn.LeakyReLU(LEAKY_SLOPE),
        nn.Linear.glorot(CRITIC_WIDTH, CRITIC_WIDTH, rng),
        nn.Dropout(CRITIC_DROPOUT),
        nn.LeakyReLU(LEAKY_SLOPE),
        nn.Linear.glorot(CRITIC_WIDTH, CRITIC_WIDTH, rng),
        nn.Dropout(CRITIC_DROPOUT),
        nn.LeakyReLU(LEAKY_SLOPE),
        nn.Linear.glorot(CRITIC_WIDTH, 1, rng),
    ])
    return GanPair(gen, critic, gan_cfg.z_dim, cond_dim, frame_dim)


def generator_forward(gan: GanPair, z, condition, rng=None) -> np.ndarray:
    """Synthetic frame(s) from latent z and condition bits."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    condition = np.atleast_2d(np.asarray(condition, dtype=np.float64))
    if z.shape[-1] != gan.z_dim or condition.shape[-1] != gan.cond_dim:
        raise ConfigError(
            f"z width {z.shape[-1]} / condition width {condition.shape[-1]} "
            f"!= ({gan.z_dim}, {gan.cond_dim})"
        )
    out, _ = nn.net_forward(gan.generator, np.concatenate([z, condition], axis=-1), rng)
    return out


# --- critic passes for the gradient penalty -------------------------------

_ELEMENTWISE = (nn.ReLU, nn.LeakyReLU, nn.Dropout)


def _critic_input_grad(critic: nn.DenseNet, x, rng):
    """Forward + input-gradient pass of a piecewise-linear critic.

    Returns (values, input_grad, stash) where stash carries the per-linear
    backward gradients and inter-linear diagonal factors needed by
    :func:`_critic_double_back`. Raises if the critic contains layers whose
    input-gradient would not be piecewise linear (e.g. sigmoid).
    """
    layers = critic.layers
    if not layers or not isinstance(layers[0], nn.Linear) or not isinstance(layers[-1], nn.Linear):
        raise ConfigError("critic must start and end with a linear layer")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]

    linears = []
    diags = []          # diags[i]: combined elementwise derivative after linear i
    cur = x
    pending = None
    for layer in layers:
        if isinstance(layer, nn.Linear):
            if pending is not None:
                diags.append(pending)
            linears.append(layer)
            cur = cur @ layer.weight + layer.bias
            pending = np.ones_like(cur)
        elif isinstance(layer, nn.ReLU):
            mask = cur > 0.0
            cur = cur * mask
            pending = pending * mask
        elif isinstance(layer, nn.LeakyReLU):
            factor = np.where(cur > 0.0, 1.0, layer.slope)
            cur = cur * factor
            pending = pending * factor
        elif isinstance(layer, nn.Dropout):
            out, mask = nn.dropout_apply(cur, layer.rate, rng, critic.mode)
            if mask is not None:
                pending = pending * mask / (1.0 - layer.rate)
            cur = out
        else:
            raise ConfigError(
                f"critic layer {type(layer).__name__} breaks the piecewise-linear "
                "requirement of the gradient penalty"
            )
    values = cur[:, 0]

    k = len(linears)
    gz = [None] * k
    g = np.ones((x.shape[0], 1))
    gz[k - 1] = g
    for i in range(k - 1, 0, -1):
        g = g @ linears[i].weight.T
        g = g * diags[i - 1]
        gz[i - 1] = g
    input_grad = g @ linears[0].weight.T if k > 1 else gz[0] @ linears[0].weight.T
    stash = {"linears": linears, "diags": diags, "gz": gz}
    return values, input_grad, stash


def _critic_double_back(stash, seed):
    """d(seed . input_grad)/d(weights) for a piecewise-linear critic.

    ``seed`` is the cotangent at the input gradient, one row per batch row.
    Bias gradients are identically zero (the input gradient of a piecewise
    linear net does not depend on biases), so only weight gradients return,
    aligned with the critic's linear layers in order.
    """
    linears, diags, gz = stash["linears"], stash["diags"], stash["gz"]
    grads = []
    t = np.asarray(seed, dtype=np.float64)
    for i, lin in enumerate(linears):
        grads.append(t.T @ gz[i])
        t = t @ lin.weight
        if i < len(linears) - 1:
            t = t * diags[i]
    return grads


def gradient_penalty(gan: GanPair, real, fake, condition, lambda_gp: float, rng):
    """lambda * mean over the batch of (||grad_y D(y_hat | x)|| - 1)^2.

    ``y_hat`` interpolates real and fake frames at a uniform random point per
    row; the norm is over the frame slice of the critic input only.
    """
    real = np.atleast_2d(np.asarray(real, dtype=np.float64))
    fake = np.atleast_2d(np.asarray(fake, dtype=np.float64))
    condition = np.atleast_2d(np.asarray(condition, dtype=np.float64))
    if real.shape != fake.shape:
        raise ConfigError(f"real {real.shape} and fake {fake.shape} differ")
    if lambda_gp == 0.0:
        return 0.0
    u = rng.random((real.shape[0], 1))
    y_hat = u * real + (1.0 - u) * fake
    penalty, _ = _penalty_and_grads(gan, y_hat, condition, lambda_gp, rng,
                                    want_grads=False)
    return penalty


def _penalty_and_grads(gan, y_hat, condition, lambda_gp, rng, want_grads=True):
    x = np.concatenate([y_hat, condition], axis=-1)
    _, input_grad, stash = _critic_input_grad(gan.critic, x, rng)
    g_sample = input_grad[:, : y_hat.shape[1]]
    norms = np.sqrt(np.sum(g_sample ** 2, axis=1))
    penalty = float(lambda_gp * np.mean((norms - 1.0) ** 2))
    if not want_grads:
        return penalty, None
    b = y_hat.shape[0]
    coef = (2.0 * lambda_gp * (norms - 1.0) / np.maximum(norms, 1e-12) / b)[:, None]
    seed = np.zeros_like(x)
    seed[:, : y_hat.shape[1]] = coef * g_sample
    return penalty, _critic_double_back(stash, seed)


def _interleave_params(critic: nn.DenseNet, weight_grads):
    """Weight-only gradients -> full param-list gradients (zero biases)."""
    grads = []
    it = iter(weight_grads)
    for layer in critic.layers:
        if isinstance(layer, nn.Linear):
            grads.append(next(it))
            grads.append(np.zeros_like(layer.bias))
    return grads


def train_wgan_gp(gan: GanPair, data: GanDataset, cfg: GanConfig):
    """Alternating critic/generator optimization; returns (gan, GanHistory).

    Per step: ``critic_iters`` critic updates minimizing
    E[D(fake|x)] - E[D(real|x)] + GP, then one generator update maximizing
    E[D(fake|x)]. Both nets use Adam with the configured hyperparameters.
    """
    if len(data) == 0:
        raise ConfigError("GAN training needs a nonempty dataset")
    gan.generator.train()
    gan.critic.train()
    gen_params = nn.net_params(gan.generator)
    cri_params = nn.net_params(gan.critic)
    gen_state = nn.adam_init(gen_params, alpha=cfg.alpha, beta1=cfg.beta1, beta2=cfg.beta2)
    cri_state = nn.adam_init(cri_params, alpha=cfg.alpha, beta1=cfg.beta1, beta2=cfg.beta2)
    history = GanHistory()
    steps_per_epoch = max(1, -(-len(data) // cfg.batch_size))
    b = min(cfg.batch_size, len(data))

    def fake_batch(rng, idx):
        z = rng.standard_normal((len(idx), gan.z_dim))
        cond = data.gen_cond[idx]
        fake, gen_caches = nn.net_forward(
            gan.generator, np.concatenate([z, cond], axis=-1), rng)
        return fake, gen_caches

    for epoch in range(cfg.epochs):
        ep = np.zeros(3)
        for step in range(steps_per_epoch):
            for ci in range(cfg.critic_iters):
                rng = seeding.derive(cfg.seed, seeding.STREAM_GAN, epoch, step, ci)
                idx = rng.integers(0, len(data), size=b)
                fake, _ = fake_batch(rng, idx)
                real = data.frames[idx]
                ccond = data.critic_cond[idx]
                x_fake = np.concatenate([fake, ccond], axis=-1)
                x_real = np.concatenate([real, ccond], axis=-1)
                d_fake, caches_f = nn.net_forward(gan.critic, x_fake, rng)
                d_real, caches_r = nn.net_forward(gan.critic, x_real, rng)
                gf, _ = nn.net_backward(gan.critic, caches_f, np.full_like(d_fake, 1.0 / b))
                gr, _ = nn.net_backward(gan.critic, caches_r, np.full_like(d_real, -1.0 / b))
                u = rng.random((b, 1))
                y_hat = u * real + (1.0 - u) * fake
                gp_val, gp_wgrads = _penalty_and_grads(gan, y_hat, ccond, cfg.lambda_gp, rng)
                grads = [a + c for a, c in zip(gf, gr)]
                if gp_wgrads is not None:
                    for g, extra in zip(grads, _interleave_params(gan.critic, gp_wgrads)):
                        g += extra
                loss_c = float(np.mean(d_fake) - np.mean(d_real) + gp_val)
                if not np.isfinite(loss_c):
                    raise NumericsError(f"non-finite critic loss at epoch {epoch}")
                nn.adam_step(cri_state, cri_params, grads)

            rng = seeding.derive(cfg.seed, seeding.STREAM_GAN, epoch, step, cfg.critic_iters)
            idx = rng.integers(0, len(data), size=b)
            fake, gen_caches = fake_batch(rng, idx)
            ccond = data.critic_cond[idx]
            x_fake = np.concatenate([fake, ccond], axis=-1)
            d_fake, caches_f = nn.net_forward(gan.critic, x_fake, rng)
            loss_g = float(-np.mean(d_fake))
            if not np.isfinite(loss_g):
                raise NumericsError(f"non-finite generator loss at epoch {epoch}")
            _, g_in = nn.net_backward(gan.critic, caches_f, np.full_like(d_fake, -1.0 / b))
            gen_grads, _ = nn.net_backward(gan.generator, gen_caches,
                                           g_in[:, : gan.frame_dim])
            nn.adam_step(gen_state, gen_params, gen_grads)
            ep += (loss_c, loss_g, gp_val)
        ep /= steps_per_epoch
        history.critic_loss.append(float(ep[0]))
        history.gen_loss.append(float(ep[1]))
        history.gp.append(float(ep[2]))
    gan.eval()
    return gan, history


# --- link-side data plumbing ----------------------------------------------


def collect_real_dataset(model: AeModel, n: int, ch: ChannelParams, rng) -> GanDataset:
    """Transmit n random bit blocks through the channel; record time frames.

    Frames are the received time-domain samples (cyclic prefix included,
    I/Q interleaved); the critic condition is the clean transmitted frame
    for the same bits.
    """
    cfg = model.cfg
    if cfg.n_t > 1:
        raise ConfigError("frame collection is defined for single-antenna configs")
    model.eval()
    bits = rng.integers(0, 2, size=(n, cfg.bits_per_frame)).astype(np.float64)
    grid = encode(model, bits)
    payload = np.fft.ifft(grid, axis=-2, norm="ortho")
    tx_time = np.concatenate([payload[..., cfg.n_fft - cfg.n_cp:, :], payload], axis=-2) \
        if cfg.n_cp else payload
    from .phy import apply_channel
    rx_time = apply_channel(tx_time, ch, rng)
    return GanDataset(
        frames=complex_to_reals(rx_time, 2),
        gen_cond=bits,
        critic_cond=complex_to_reals(tx_time, 2),
    )


def generate_synthetic(gan: GanPair, n: int, condition_sampler, rng):
    """n synthetic frames with fresh z and sampled conditions.

    ``condition_sampler(n, rng)`` must return an (n, cond_dim) bit array.
    Returns (conditions, frames); n = 0 yields empty arrays.
    """
    if n == 0:
        return (np.zeros((0, gan.cond_dim)), np.zeros((0, gan.frame_dim)))
    cond = np.asarray(condition_sampler(n, rng), dtype=np.float64)
    z = rng.standard_normal((n, gan.z_dim))
    gan.generator.eval()
    frames = generator_forward(gan, z, cond)
    return cond, frames


def fit_decoder_on_frames(cfg: LinkConfig, bits, frames, rng,
                          epochs: int = 150, batch_size: int = 64,
                          alpha: float = 1e-3) -> nn.DenseNet:
    """Supervised decoder training on (bits, received time frame) pairs."""
    from .link import build_ae
    from .phy import ofdm_demodulate
    from .link import reals_to_complex as r2c

    decoder = build_ae(cfg, rng).decoder
    params = nn.net_params(decoder)
    state = nn.adam_init(params, alpha=alpha)
    bits = np.asarray(bits, dtype=np.float64)
    time = r2c(np.asarray(frames, dtype=np.float64), (cfg.n_samp, cfg.n_ch))
    grids = ofdm_demodulate(time, cfg)
    inputs = complex_to_reals(grids, 2)
    n = bits.shape[0]
    decoder.train()
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            sel = order[lo: lo + batch_size]
            probs, caches = nn.net_forward(decoder, inputs[sel], rng)
            _, gprobs = nn.bce_loss(probs, bits[sel])
            grads, _ = nn.net_backward(decoder, caches, gprobs)
            nn.adam_step(state, params, grads)
    decoder.eval()
    return decoder


def augment_and_select(model: AeModel, real: GanDataset, gan: GanPair,
                       eval_snr_db: float, candidates, ch: ChannelParams,
                       seed: int, fit_epochs: int = 150, val_bits: int = 100_000):
    """Pick the synthetic-sample multiplier with the best validation BER.

    For each multiplier m, a fresh decoder is fit on the real frames plus
    m * len(real) synthetic ones, then scored end-to-end (frozen collection
    encoder, simulated channel at ``eval_snr_db``). Returns
    (best_multiplier, rows) with rows of (m, ber); ties break toward the
    smaller multiplier.
    """
    from .link import measure_ber

    candidates = list(candidates)
    if not candidates:
        raise ConfigError("candidates must be nonempty")
    cfg = model.cfg
    ch_eval = replace(ch, snr_db=float(eval_snr_db))

    def bit_sampler(n, rng):
        return rng.integers(0, 2, size=(n, gan.cond_dim)).astype(np.float64)

    rows = []
    for ci, m in enumerate(candidates):
        rng = seeding.derive(seed, seeding.STREAM_DATA, ci)
        cond_syn, frames_syn = generate_synthetic(gan, m * len(real), bit_sampler, rng)
        bits_all = np.concatenate([real.gen_cond, cond_syn], axis=0)
        frames_all = np.concatenate([real.frames, frames_syn], axis=0)
        # same decoder init for every candidate: differences come from data
        decoder = fit_decoder_on_frames(cfg, bits_all, frames_all,
                                        seeding.derive(seed, seeding.STREAM_INIT),
                                        epochs=fit_epochs)
        trial = AeModel(model.encoder, decoder, cfg).eval()
        ber, _, _ = measure_ber(trial, ch_eval, None, val_bits,
                                seeding.derive(seed, seeding.STREAM_VALIDATE, ci))
        rows.append((int(m), float(ber)))
    best = min(rows, key=lambda r: (r[1], r[0]))[0]
    return best, rows
