"""Command-line experiment harness.

Every command takes a flat key=value config file (see :mod:`aecomm.config`)
plus a ``--seed`` that overrides any ``seed`` key, and writes CSV or binary
artifacts whose bytes are a pure function of (config, seed).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import config as cfgmod
from . import gan as ganmod
from . import modelio, seeding, sweeps
from .baseline import make_constellation
from .errors import ConfigError, FormatError, NumericsError
from .link import AeModel, build_ae, draw_rayleigh_h
from .quantize import QuantizedModel, quantize_model
from .sweeps import FrontierSpec, SweepSpec
from .training import train


def _seed_of(table: dict, args) -> int:
    if args.seed is not None:
        return args.seed
    return int(table.get("seed", 0))


def _mimo_h(table: dict, cfg):
    """Quasi-static spatial channel when configured, else per-frame redraw."""
    if cfg.n_t <= 1:
        return None
    h_seed = table.get("mimo.h_seed")
    if h_seed is None:
        return None
    return draw_rayleigh_h(cfg.n_r, cfg.n_t,
                           seeding.derive(int(h_seed), seeding.STREAM_CHANNEL))


def _system_for(table: dict, args, prefix: str):
    link_cfg = cfgmod.link_config(table)
    kind = table.get(ف"{prefix}.system", "ae") if False else table.get(prefix + ".system", "ae")
    if kind == "conventional":
        return sweeps.ConventionalSystem(make_constellation(link_cfg.k), link_cfg)
    model = modelio.load_model(args.model)
    if isinstance(model, ganmod.GanPair):
        raise ConfigError(f"{args.model} holds a GAN, not a link model")
    return sweeps.AeSystem(model, h=_mimo_h(table, model.cfg))


def cmd_train(args) -> int:
    table = cfgmod.read_config(args.config)
    seed = _seed_of(table, args)
    link_cfg = cfgmod.link_config(table)
    tcfg = cfgmod.train_config(table, seed=seed)
    model = build_ae(link_cfg, seeding.derive(seed, seeding.STREAM_INIT))
    h = _mimo_h(table, link_cfg)
    model, history = train(model, tcfg, h=h)
    modelio.save_model(model, args.out)
    if args.log:
        sweeps.write_csv(args.log, sweeps.TRAINLOG_HEADER, history.rows())
    print(f"trained {tcfg.n_ep} epochs; final val BER {history.val_ber[-1]:.6g}; "
          f"wrote {args.out}")
    return 0


def cmd_dataset_make(args) -> int:
    table = cfgmod.read_config(args.config)
    seed = _seed_of(table, args)
    model = modelio.load_model(args.model)
    if not isinstance(model, AeModel):
        raise ConfigError("dataset collection needs a float link model")
    ch = cfgmod.channel_params(table)
    count = int(table.get("dataset.count", args.count or 100))
    data = ganmod.collect_real_dataset(model, count,
                                       ch, seeding.derive(seed, seeding.STREAM_DATA))
    modelio.save_dataset(data.gen_cond, data.frames, args.out)
    print(f"wrote {count} frames to {args.out}")
    return 0


def cmd_train_gan(args) -> int:
    table = cfgmod.read_config(args.config)
    seed = _seed_of(table, args)
    model = modelio.load_model(args.model)
    gcfg = cfgmod.gan_config(table, seed=seed)
    bits, frames = modelio.load_dataset(args.data)
    from .gan import GanDataset, build_wgan, train_wgan_gp
    from .link import complex_to_reals, encode
    cfg = model.cfg
    grid = encode(model.eval(), bits)
    payload = np.fft.ifft(grid, axis=-2, norm="ortho")
    tx_time = np.concatenate([payload[..., cfg.n_fft - cfg.n_cp:, :], payload], axis=-2) \
        if cfg.n_cp else payload
    data = GanDataset(frames=frames, gen_cond=bits,
                      critic_cond=complex_to_reals(tx_time, 2))
    pair = build_wgan(cfg, gcfg, seeding.derive(seed, seeding.STREAM_INIT))
    pair, history = train_wgan_gp(pair, data, gcfg)
    modelio.save_model(pair, args.out)
    print(f"trained GAN {gcfg.epochs} epochs; final critic loss "
          f"{history.critic_loss[-1]:.6g}; wrote {args.out}")
    return 0


def cmd_augment(args) -> int:
    table = cfgmod.read_config(args.config)
    seed = _seed_of(table, args)
    model = modelio.load_model(args.model)
    pair = modelio.load_model(args.gan)
    if not isinstance(pair, ganmod.GanPair):
        raise ConfigError(f"{args.gan} does not hold a GAN")
    bits, frames = modelio.load_dataset(args.data)
    data = ganmod.GanDataset(frames=frames, gen_cond=bits,
                             critic_cond=np.zeros((bits.shape[0], 0)))
    ch = cfgmod.channel_params(table)
    candidates = table.get("augment.candidates", [0, 2, 4, 6, 8, 10])
    eval_snr = float(table.get("augment.eval_snr_db", ch.snr_db))
    best, rows = ganmod.augment_and_select(
        model, data, pair, eval_snr, candidates, ch, seed,
        fit_epochs=int(table.get("augment.fit_epochs", 150)),
        val_bits=int(table.get("augment.val_bits", 100_000)),
    )
    sweeps.write_csv(args.out, "multiplier,ber", rows)
    print(f"best multiplier: {best}; wrote {args.out}")
    return 0


def cmd_quantize(args) -> int:
    model = modelio.load_model(args.model)
    if not isinstance(model, AeModel):
        raise ConfigError("quantize expects a float link model")
    qmodel = quantize_model(model)
    modelio.save_model(qmodel, args.out)
    from .quantize import model_size_bytes
    print(f"float {model_size_bytes(model)} bytes -> "
          f"int8 {model_size_bytes(qmodel)} bytes; wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    table = cfgmod.read_config(args.config)
    seed = _seed_of(table, args)
    system = _system_for(table, args, "sweep")
    grid = table.get("sweep.snr_grid_db")
    if grid is None:
        raise ConfigError("config needs sweep.snr_grid_db")
    spec = SweepSpec(
        snr_grid_db=[float(g) for g in np.atleast_1d(grid)],
        n_frames=int(table.get("sweep.n_frames", 20_000)),
        metric=str(table.get("sweep.metric", "ber")),
        jam=cfgmod.jammer_params(table),
        seed=seed,
        min_errors=int(table.get("sweep.min_errors", 100)),
    )
    ch = cfgmod.channel_params(table)
    rows = sweeps.sweep_snr_ber(system, spec, ch)
    sweeps.write_csv(args.out, sweeps.SWEEP_HEADER, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_frontier(args) -> int:
    table = cfgmod.read_config(args.config)
    seed = _seed_of(table, args)
    system = _system_for(table, args, "frontier")
    grid = table.get("frontier.jsr_grid_db")
    if grid is None:
        raise ConfigError("config needs frontier.jsr_grid_db")
    spec = FrontierSpec(
        jsr_grid_db=[float(g) for g in np.atleast_1d(grid)],
        ber_target=float(table.get("frontier.ber_target", 1e-2)),
        snr_search_range_db=(float(table.get("frontier.snr_lo", -5.0)),
                             float(table.get("frontier.snr_hi", 30.0))),
        snr_step_db=float(table.get("frontier.snr_step_db", 0.5)),
        n_te_jam=int(table.get("frontier.n_te_jam", 1)),
        seed=seed,
        max_frames=int(table.get("frontier.max_frames", 60_000)),
    )
    ch = cfgmod.channel_params(table)
    rows = sweeps.frontier_snr_jsr(system, spec, ch)
    sweeps.write_csv(args.out, sweeps.FRONTIER_HEADER, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_constellation(args) -> int:
    if args.baseline:
        rows = sweeps.export_constellation(make_constellation(args.baseline))
    else:
        model = modelio.load_model(args.model)
        rows = sweeps.export_constellation(model, snr_db=args.snr_db,
                                           max_patterns=args.max_patterns,
                                           seed=args.seed or 0)
    sweeps.write_csv(args.out, sweeps.CONSTELLATION_HEADER, rows)
    print(f"wrote {len(rows)} points to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aecomm",
                                description="autoencoder OFDM link experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, model=False, out=True):
        if config:
            sp.add_argument("--config", required=True, help="key=value config file")
        if model:
            sp.add_argument("--model", required=True, help="model file (AECM)")
        if out:
            sp.add_argument("--out", required=True, help="output path")
        sp.add_argument("--seed", type=int, default=None,
                        help="master seed (overrides config)")

    sp = sub.add_parser("train", help="train a link autoencoder")
    common(sp)
    sp.add_argument("--log", help="training log CSV path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("dataset-make", help="collect real received frames")
    common(sp, model=True)
    sp.add_argument("--count", type=int, default=None, help="frames to collect")
    sp.set_defaults(func=cmd_dataset_make)

    sp = sub.add_parser("train-gan", help="train the frame-augmentation WGAN-GP")
    common(sp, model=True)
    sp.add_argument("--data", required=True, help="real dataset (AEDS)")
    sp.set_defaults(func=cmd_train_gan)

    sp = sub.add_parser("augment", help="select the synthetic-sample multiplier")
    common(sp, model=True)
    sp.add_argument("--gan", required=True, help="trained GAN model file")
    sp.add_argument("--data", required=True, help="real dataset (AEDS)")
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("quantize", help="post-training int8 quantization")
    common(sp, config=False, model=True)
    sp.set_defaults(func=cmd_quantize)

    sp = sub.add_parser("sweep", help="BER/EVM vs SNR sweep")
    common(sp)
    sp.add_argument("--model", default=None, help="model file (AECM)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("frontier", help="SNR-JSR achievability frontier")
    common(sp)
    sp.add_argument("--model", default=None, help="model file (AECM)")
    sp.set_defaults(func=cmd_frontier)

    sp = sub.add_parser("constellation", help="export encoder constellation points")
    common(sp, config=False)
    sp.add_argument("--model", default=None, help="model file (AECM)")
    sp.add_argument("--baseline", type=int, default=None,
                    help="export a conventional constellation (bits per symbol)")
    sp.add_argument("--snr-db", dest="snr_db", type=float, default=None)
    sp.add_argument("--max-patterns", dest="max_patterns", type=int, default=4096)
    sp.set_defaults(func=cmd_constellation)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, NumericsError, FileNotFoundError,
            sweeps.FrontierViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
