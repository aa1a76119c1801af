"""``nilm`` command line: synth, train, disaggregate, evaluate, gradcheck."""
import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import data
from .config import RunConfig, parse_overrides
from .estimator import Seq2SeqDisaggregator
from .exceptions import CheckpointError, ConfigError, DataError, NilmError
from .network import NetworkConfig, build_network, load_checkpoint
from .training import gradient_check, write_history_csv
from .windowing import disaggregate

logger = logging.getLogger("glunilm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECK = 4

COMMANDS = ("synth", "train", "disaggregate", "evaluate", "gradcheck")


class StageError(NilmError):
    """Wraps a module error with the pipeline stage it came from."""

    def __init__(self, stage, exc):
        self.stage = stage
        self.original = exc
        super().__init__(f"{stage}: {exc}")


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (NilmError, OSError, ValueError) as exc:
        raise StageError(name, exc) from exc


def _split_paths(value):
    return [p.strip() for p in value.split(",") if p.strip()]


def aggregate_fingerprint(segments):
    digest = hashlib.sha256()
    for seg in segments:
        digest.update(np.ascontiguousarray(seg, dtype="<f8").tobytes())
    return digest.hexdigest()


def _load_inputs(channel_paths, aggregate_path, extra, cfg, min_length):
    """Load and align channels; return segments of (timestamps, aggregate, extras)."""
    channels, names = [], []
    for path in channel_paths:
        ch = _stage(f"loading channel {path}", data.load_series, path)
        channels.append(ch)
        names.append(ch.name)
    extra_names = {}
    for key, path in extra.items():
        if path in channel_paths:
            extra_names[key] = names[channel_paths.index(path)]
            continue
        ch = _stage(f"loading {key} {path}", data.load_series, path, f"__{key}")
        channels.append(ch)
        extra_names[key] = ch.name
    if aggregate_path:
        agg = _stage(f"loading aggregate {aggregate_path}", data.load_series, aggregate_path, "__aggregate")
        channels.append(agg)
    if not channels:
        raise StageError("loading", DataError("no input channels given"))
    segments = _stage(
        "aligning channels", data.align_to_grid, channels, cfg["period"], cfg["max_gap"], min_length
    )
    if not segments:
        raise StageError("aligning channels", DataError(f"no aligned segment has >= {min_length} samples"))
    out = []
    for seg in segments:
        if aggregate_path:
            agg = seg["__aggregate"]
        else:
            agg = _stage("synthesizing aggregate", data.synthesize_aggregate, [seg[n] for n in names])
        out.append((agg.timestamps, agg.watts, {k: seg[n].watts for k, n in extra_names.items()}))
    return out


def cmd_synth(cfg):
    out_dir = Path(cfg["output_dir"])
    _stage("creating output directory", out_dir.mkdir, parents=True, exist_ok=True)
    house = _stage(
        "synthesizing household",
        data.synth_household,
        cfg["seed"],
        cfg["days"] * data.DAY,
        _split_paths(cfg["appliances"]),
        period=cfg["period"],
        noise_sigma=cfg["noise_sigma"],
        start=cfg["start"],
    )
    for name, channel in house.channels.items():
        _stage(f"writing {name}", data.write_channel, channel, out_dir / f"{name}.dat")
    _stage("writing aggregate", data.write_channel, house.aggregate, out_dir / "aggregate.dat")
    cfg.write(out_dir / "synth.cfg")
    logger.info("wrote %d channels of %d samples to %s", len(house.channels), len(house.aggregate), out_dir)
    return EXIT_OK


def cmd_train(cfg):
    out_dir = Path(cfg["output_dir"])
    _stage("creating output directory", out_dir.mkdir, parents=True, exist_ok=True)
    net_cfg = NetworkConfig(
        l_in=cfg["l_out"] * 2 ** cfg["n_glu_stages"],
        **{k: cfg[k] for k in ("l_out", "n_glu_stages", "conv_channels", "kernel_size",
                               "n_res_blocks", "res_hidden")},
        rng_seed=cfg["seed"],
    )
    segments = _load_inputs(
        _split_paths(cfg["channels"]), cfg["aggregate"], {"target": cfg["target"]}, cfg, net_cfg.l_in
    )
    est = Seq2SeqDisaggregator(
        appliance=cfg["appliance"],
        appliance_divisor=cfg["appliance_divisor"] or None,
        on_threshold=None if cfg["on_threshold"] < 0 else cfg["on_threshold"],
        aggregate_divisor=cfg["aggregate_divisor"],
        l_out=net_cfg.l_out,
        n_glu_stages=net_cfg.n_glu_stages,
        conv_channels=net_cfg.conv_channels,
        kernel_size=net_cfg.kernel_size,
        n_res_blocks=net_cfg.n_res_blocks,
        res_hidden=net_cfg.res_hidden,
        step=cfg["step"],
        train_step=cfg["train_step"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        beta1=cfg["beta1"],
        beta2=cfg["beta2"],
        epsilon=cfg["epsilon"],
        epochs=cfg["epochs"],
        max_steps=cfg["max_steps"] or None,
        validation_fraction=cfg["validation_fraction"],
        rebalance_p_target=cfg["p_target"] if cfg["rebalance"] else None,
        random_state=cfg["seed"],
    )
    aggs = [agg for _, agg, _ in segments]
    targets = [extra["target"] for _, _, extra in segments]
    _stage("training", est.fit, aggs, targets)
    ckpt = est.to_checkpoint()
    ckpt.train_fingerprint = aggregate_fingerprint(aggs)
    _stage("writing checkpoint", ckpt.save, out_dir / "model.ckpt")
    _stage("writing history", write_history_csv, est.history_, out_dir / "history.csv")
    cfg.write(out_dir / "train.cfg")
    logger.info("trained %d steps on %d windows; best epoch %d", est.n_steps_,
                est.n_train_windows_, est.best_epoch_)
    return EXIT_OK


def cmd_disaggregate(cfg):
    ckpt = _stage(f"loading checkpoint {cfg['checkpoint']}", load_checkpoint, cfg["checkpoint"])
    if cfg["appliance"] and cfg["appliance"] != ckpt.appliance:
        raise StageError(
            "checking checkpoint",
            DataError(f"checkpoint is for {ckpt.appliance!r}, config asks for {cfg['appliance']!r}"),
        )
    channel_paths = _split_paths(cfg["channels"])
    if bool(channel_paths) == bool(cfg["aggregate"]):
        raise ConfigError("disaggregate needs exactly one of 'channels' or 'aggregate'")
    net = ckpt.network
    segments = _load_inputs(channel_paths, cfg["aggregate"], {}, cfg, net.config.l_out)
    if ckpt.train_fingerprint and aggregate_fingerprint([a for _, a, _ in segments]) == ckpt.train_fingerprint:
        raise StageError(
            "checking inputs",
            DataError("aggregate is identical to the checkpoint's training data; use a different house"),
        )
    ts, watts = [], []
    for t, agg, _ in segments:
        ts.append(t)
        watts.append(_stage(
            "disaggregating", disaggregate, net, agg, ckpt.aggregate_divisor,
            ckpt.appliance_divisor, cfg["step"], cfg["batch_size"],
        ))
    output = Path(cfg["output"])
    _stage("creating output directory", output.parent.mkdir, parents=True, exist_ok=True)
    _stage("writing predictions", data.write_series_csv, np.concatenate(ts), np.concatenate(watts), output)
    cfg.write(output.with_name(output.name + ".cfg"))
    return EXIT_OK


def evaluation_metrics(pred, truth, on_threshold, period):
    """MAE in watts, MAE over on-state samples, and energy predicted while off (Wh)."""
    err = np.abs(pred - truth)
    on = truth > on_threshold
    return {
        "n_samples": len(truth),
        "mae_w": float(np.mean(err)),
        "on_mae_w": float(np.mean(err[on])) if on.any() else float("nan"),
        "off_false_positive_wh": float(np.sum(pred[~on]) * period / 3600.0),
    }


def cmd_evaluate(cfg):
    pred = _stage(f"loading predictions {cfg['predictions']}", data.load_series, cfg["predictions"])
    truth = _stage(f"loading truth {cfg['truth']}", data.load_series, cfg["truth"])
    common, ip, it = np.intersect1d(pred.timestamps, truth.timestamps, return_indices=True)
    if len(common) == 0:
        raise StageError("aligning", DataError("predictions and truth share no timestamps"))
    threshold = cfg["on_threshold"]
    if threshold < 0:
        threshold = data.get_appliance(cfg["appliance"]).on_threshold if cfg["appliance"] else 0.0
    metrics = evaluation_metrics(pred.watts[ip], truth.watts[it], threshold, cfg["period"])
    output = Path(cfg["output"])
    output.parent.mkdir(parents=True, exist_ok=True)
    with open(output, "w") as fh:
        fh.write(",".join(metrics) + "\n")
        fh.write(",".join(str(v) if isinstance(v, int) else repr(v) for v in metrics.values()) + "\n")
    cfg.write(output.with_name(output.name + ".cfg"))
    print(", ".join(f"{k}={v}" for k, v in metrics.items()))
    return EXIT_OK


def cmd_gradcheck(cfg):
    net_cfg = NetworkConfig(
        l_in=cfg["l_out"] * 2 ** cfg["n_glu_stages"],
        **{k: cfg[k] for k in ("l_out", "n_glu_stages", "conv_channels", "kernel_size",
                               "n_res_blocks", "res_hidden")},
        rng_seed=cfg["seed"],
    )
    net = build_network(net_cfg)
    rng = np.random.default_rng(cfg["seed"] + 1)
    x = rng.uniform(0.0, 1.0, (cfg["batch"], net_cfg.l_in))
    y = rng.uniform(0.0, 0.5, (cfg["batch"], net_cfg.l_out))
    report = gradient_check(net, x, y, h=cfg["h"], n_coords=cfg["n_coords"], seed=cfg["seed"])
    text = report.format()
    print(text)
    if cfg["report"]:
        path = Path(cfg["report"])
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
        cfg.write(path.with_name(path.name + ".cfg"))
    if report.max_relative_error >= cfg["threshold"]:
        print(f"FAILED: max relative error {report.max_relative_error:.3e} >= {cfg['threshold']:.1e}")
        return EXIT_CHECK
    return EXIT_OK


HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "disaggregate": cmd_disaggregate,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nilm",
        description="Convolutional sequence-to-sequence energy disaggregation.",
        epilog="Any config key can be overridden with --key value.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key=value config file")
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.command, args.config, parse_overrides(rest))
        return HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"nilm {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        code = EXIT_CONFIG if isinstance(exc.original, ConfigError) else EXIT_DATA
        print(f"nilm {args.command}: {exc}", file=sys.stderr)
        return code
    except (DataError, CheckpointError, OSError) as exc:
        print(f"nilm {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
