"""Command-line entry point: ``aqfed <command> [flags]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio, federation, learner, noise
from .errors import AqfedError, ConfigError, NoPairsFound, NonFiniteError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_VERIFY = 5
EXIT_INTERRUPT = 130

log = logging.getLogger("aqfed")


class RowWriter:
    """Machine-readable rows on stdout, CSV by default or JSON lines."""

    def __init__(self, fields, as_json: bool, stream=None):
        self.fields = list(fields)
        self.as_json = as_json
        self.stream = stream or sys.stdout
        self.rows: list[dict] = []
        self._csv = None
        if not as_json:
            self._csv = csv.writer(self.stream, lineterminator="\n")
            self._csv.writerow(self.fields)
            self.stream.flush()

    def write(self, row: dict):
        self.rows.append(row)
        if self.as_json:
            self.stream.write(json.dumps(row, sort_keys=True) + "\n")
        else:
            self._csv.writerow([_fmt(row[f]) for f in self.fields])
        self.stream.flush()


def _fmt(v):
    if isinstance(v, float):
        return dataio.format_number(v)
    return v


def _load_config(args) -> dataio.ExperimentConfig:
    cfg = dataio.load_config(args.config) if args.config else dataio.ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _out_dir(path) -> Path:
    out = Path(path)
    dataio.ensure_writable(out)
    return out


# -- commands ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args.out)
    clean = dataio.generate_synthetic_dataset(cfg)
    test = dataio.generate_test_set(cfg)
    out.mkdir(parents=True, exist_ok=True)
    rows = RowWriter(["client_id", "samples"], args.json)
    for cid, samples in enumerate(clean, start=1):
        d = out / f"client_{cid:03d}"
        d.mkdir(exist_ok=True)
        for i, s in enumerate(samples):
            dataio.write_image_png(s.image, d / f"{i:04d}_img.png")
            dataio.write_mask_png(s.clean_mask, d / f"{i:04d}_mask.png")
        rows.write({"client_id": cid, "samples": len(samples)})
    d = out / "test"
    d.mkdir(exist_ok=True)
    for i, s in enumerate(test):
        dataio.write_image_png(s.image, d / f"{i:04d}_img.png")
        dataio.write_mask_png(s.clean_mask, d / f"{i:04d}_mask.png")
    (out / "config.json").write_text(dataio.dumps_canonical(cfg.to_dict()))
    return EXIT_OK


def cmd_corrupt(args) -> int:
    cfg = _load_config(args)
    src = Path(args.data)
    client_dirs = sorted(p for p in src.glob("client_*") if p.is_dir())
    if not client_dirs:
        raise NoPairsFound(f"no client_* directories in {src}")
    out = _out_dir(args.out)
    clean = []
    for d in client_dirs:
        clean.append(
            [dataio.SyntheticSample(image=img, clean_mask=m) for img, m in dataio.load_external_masks(d)]
        )
    fed = dataio.corrupt_federation(
        clean, cfg.noise.hetero(), cfg.seed, cfg.noise.l_sub, cfg.noise.degree_p
    )
    out.mkdir(parents=True, exist_ok=True)
    rows = RowWriter(["client_id", "mu", "sigma", "samples", "annihilated"], args.json)
    for d, cem, samples, warn in zip(client_dirs, fed.cems, fed.clients, fed.warnings):
        target = out / d.name
        target.mkdir(exist_ok=True)
        for i, s in enumerate(samples):
            dataio.write_image_png(s.image, target / f"{i:04d}_img.png")
            dataio.write_mask_png(s.noisy_mask, target / f"{i:04d}_mask.png")
        rows.write(
            {
                "client_id": int(d.name.split("_")[-1]),
                "mu": cem.mu,
                "sigma": cem.sigma,
                "samples": len(samples),
                "annihilated": len(warn),
            }
        )
        for w in warn:
            log.warning("%s: %s", d.name, w)
    (out / "noise_manifest.json").write_text(dataio.dumps_canonical(fed.manifest()))
    return EXIT_OK


def _persist_partial(out: Path | None, rows: list[dict]):
    if out is None or not rows:
        return
    out.mkdir(parents=True, exist_ok=True)
    metric_rows = [
        {"round": r["round"], "metric": k, "value": r[k]}
        for r in rows
        for k in ("test_dice_mean", "test_dice_std", "train_loss_mean")
    ]
    (out / "metrics.partial.csv").write_text(dataio.metrics_csv(metric_rows))


def cmd_train(args) -> int:
    cfg = _load_config(args)
    changes = {}
    if args.mode is not None:
        changes["mode"] = args.mode
    if args.workers is not None:
        changes["workers"] = args.workers
    if changes:
        cfg = cfg.replace(**changes)
    out = _out_dir(args.out) if args.out else None
    data = federation.prepare_federation(cfg)
    rows = RowWriter(["round", "mode", "test_dice_mean", "test_dice_std", "train_loss_mean"], args.json)
    try:
        report = federation.run_federation(cfg, data=data, on_round=rows.write)
    except KeyboardInterrupt:
        _persist_partial(out, rows.rows)
        raise
    if out is not None:
        ckpt = learner.save_checkpoint(report.final_params, cfg.hash())
        path = dataio.persist_run(report, cfg, out, data.corrupted.manifest(), checkpoint=ckpt)
        print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    try:
        blob = Path(args.checkpoint).read_bytes()
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read {args.checkpoint}: {exc.strerror}") from None
    params, _ = learner.load_checkpoint(blob)
    if args.data:
        pairs = dataio.load_external_masks(args.data)
        images = np.stack([p[0] for p in pairs])
        masks = np.stack([p[1] for p in pairs])
    else:
        test = dataio.generate_test_set(cfg)
        images = np.stack([s.image for s in test])
        masks = np.stack([s.clean_mask for s in test])
    pred = learner.predict_masks(params.copy(), images)
    scores = [learner.dice_score(p, t) for p, t in zip(pred, masks)]
    rows = RowWriter(["samples", "dice_mean", "dice_std"], args.json)
    rows.write({"samples": len(scores), "dice_mean": float(np.mean(scores)), "dice_std": float(np.std(scores))})
    return EXIT_OK


def _parse_values(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("values", f"cannot parse {text!r} as a comma-separated list") from None
    if not values:
        raise ConfigError("values", "empty list")
    return values


def cmd_sweep(args) -> int:
    cfg = _load_config(args).replace(mode="full")
    values = _parse_values(args.values)
    if args.repeats < 1:
        raise ConfigError("repeats", "must be >= 1")
    out = _out_dir(args.out) if args.out else None
    rows = RowWriter(["param", "value", "dice_mean", "dice_std", "repeats"], args.json)
    for v in values:
        if args.param == "r":
            changed = {"balance_r": v}
        else:
            if v != int(v):
                raise ConfigError("values", "T1 values must be integers")
            changed = {"warmup_rounds": int(v)}
        finals = []
        for rep in range(args.repeats):
            run_cfg = cfg.replace(seed=cfg.seed + rep, **changed)
            finals.append(federation.run_federation(run_cfg).final_dice)
        rows.write(
            {
                "param": args.param,
                "value": v,
                "dice_mean": float(np.mean(finals)),
                "dice_std": float(np.std(finals)),
                "repeats": args.repeats,
            }
        )
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        buf = [",".join(rows.fields)]
        buf += [",".join(str(_fmt(r[f])) for f in rows.fields) for r in rows.rows]
        (out / "summary.csv").write_text("\n".join(buf) + "\n")
    return EXIT_OK


def variance_check(trials: int, sigma: float, rng, contour_len: int = 400, l_sub: int = 16,
                   degree_p: int = noise.DEFAULT_DEGREE) -> dict:
    """Monte Carlo per-index variance of the fitted bias against the closed form."""
    params = noise.CemParams(mu=0.0, sigma=sigma, l_sub=l_sub, degree_p=degree_p)
    draws = np.stack([noise.generate_bias(contour_len, params, rng) for _ in range(trials)])
    emp = draws.var(axis=0, ddof=1)
    exact = noise.bias_variance(contour_len, l_sub, degree_p, sigma)
    # standard error of a sample variance of Gaussian draws
    se = exact * np.sqrt(2.0 / (trials - 1))
    z = np.abs(emp - exact) / se
    return {
        "max_z": float(z.max()),
        "within_3se": float(np.mean(z <= 3)),
        "variance_ratio": float(exact.max() / exact.min()),
    }


def cmd_verify_noise(args) -> int:
    cfg = _load_config(args)
    if args.trials < 100:
        raise ConfigError("trials", "at least 100 trials are needed")
    v = cfg.verify
    yy, xx = np.mgrid[0 : v.size, 0 : v.size]
    c = (v.size - 1) / 2
    disk = (yy - c) ** 2 + (xx - c) ** 2 <= v.radius**2
    params = noise.CemParams(mu=v.mu, sigma=v.sigma, l_sub=cfg.noise.l_sub, degree_p=cfg.noise.degree_p)
    rng = np.random.default_rng(cfg.seed)
    rep = noise.verify_pdn(params, disk, args.trials, v.epsilon, rng)
    result = {
        "mu": v.mu,
        "sigma": v.sigma,
        "inside_rate": rep.inside_rate,
        "outside_rate": rep.outside_rate,
        "rate_ratio": rep.rate_ratio,
        "condition1": rep.condition1,
        "locus_ratio": rep.locus_ratio,
        "condition2": "not applicable" if rep.condition2 is None else rep.condition2,
    }
    if v.sigma > 0:
        result.update(variance_check(args.trials, v.sigma, rng))
    if args.json:
        print(json.dumps(result, sort_keys=True))
    else:
        for k, val in result.items():
            print(f"{k}: {_fmt(val)}")
        ok = rep.condition1 and rep.condition2 is not False
        print("PDN: " + ("pass" if ok else "FAIL"))
    failed = v.sigma > 0 and not (rep.condition1 and rep.condition2)
    return EXIT_VERIFY if failed else EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="TOML or JSON experiment config")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--json", action="store_true", help="emit JSON lines instead of CSV")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    parser = argparse.ArgumentParser(prog="aqfed", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], formatter_class=fmt,
                       help="write the clean synthetic federation as PNGs")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("corrupt", parents=[common], formatter_class=fmt,
                       help="apply per-client annotation noise to a gen-data directory")
    p.add_argument("--data", required=True, help="directory written by gen-data")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("train", parents=[common], formatter_class=fmt,
                       help="run federated training and persist the run")
    p.add_argument("--mode", choices=dataio.MODES, default=None, help="aggregation mode (config value if omitted)")
    p.add_argument("--workers", type=int, default=None, help="client training processes (config value if omitted)")
    p.add_argument("--out", default=None, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], formatter_class=fmt,
                       help="Dice of a saved model on the synthetic test set or a PNG directory")
    p.add_argument("--checkpoint", required=True, help="model.ckpt written by train")
    p.add_argument("--data", default=None, help="directory of *_img.png / *_mask.png pairs")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], formatter_class=fmt,
                       help="repeat full-mode training over values of r or T1")
    p.add_argument("--param", choices=("r", "T1"), required=True, help="parameter to vary")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--repeats", type=int, default=1, help="seeds per value (seed, seed+1, ...)")
    p.add_argument("--out", default=None, help="directory for summary.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-noise", parents=[common], formatter_class=fmt,
                       help="Monte Carlo check of pixel dependence and bias variance")
    p.add_argument("--trials", type=int, default=500, help="Monte Carlo trials")
    p.set_defaults(func=cmd_verify_noise)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, NoPairsFound) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NonFiniteError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except KeyboardInterrupt:
        sys.stdout.flush()
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPT
    except AqfedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
