"""Command-line front end: train, eval-union, sweep-pnoise, subspace, noise-hist.

Exit codes: 0 success, 1 internal or numeric failure, 2 user/config error.
The output directory comes from ``--output-dir``, then ``$SNAPLAB_OUTPUT_DIR``,
then ``run.output_dir`` in the config.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, attacks, checkpoint, data, models, noise, training
from .config import ExperimentConfig, load_config
from .errors import ConfigError, FormatError, SnapError

log = logging.getLogger("snaplab")


def load_datasets(cfg: ExperimentConfig):
    d = cfg["data"]
    classes = d["classes"] or None
    if d["source"] == "digits":
        return data.load_digits(classes, d["n_train"], d["n_test"], rng=d["data_seed"],
                                upsample=d["upsample"])
    if d["source"] == "blobs":
        train = data.make_blobs(d["n_per_class"], d["n_classes"], d["dim"], d["margin"], d["data_seed"], "train")
        test = data.make_blobs(d["n_test_per_class"], d["n_classes"], d["dim"], d["margin"], d["data_seed"], "test")
        return train, test
    train = data.load_idx(cfg.resolve(d["train_images"]), cfg.resolve(d["train_labels"]), split="train")
    test = data.load_idx(cfg.resolve(d["test_images"]), cfg.resolve(d["test_labels"]), split="test")
    count = max(train.class_count, test.class_count)
    if classes:
        keep_tr, keep_te = np.isin(train.labels, classes), np.isin(test.labels, classes)
        remap = np.asarray(sorted(classes))
        train = data.Dataset(train.inputs[keep_tr], np.searchsorted(remap, train.labels[keep_tr]),
                             len(classes), "train", train.image_shape)
        test = data.Dataset(test.inputs[keep_te], np.searchsorted(remap, test.labels[keep_te]),
                            len(classes), "test", test.image_shape)
    else:
        train.class_count = test.class_count = count
    train = train.take(np.arange(min(d["n_train"], len(train))))
    test = test.take(np.arange(min(d["n_test"], len(test))))
    return train, test


def build_net(cfg: ExperimentConfig, train: data.Dataset, p_noise=None) -> noise.SnapNet:
    m, nz = cfg["model"], cfg["noise"]
    if m["kind"] == "mlp":
        base = models.init("mlp", [train.dim, *m["hidden"], train.class_count], cfg.seed)
    else:
        if train.image_shape is None:
            raise ConfigError("model.kind=cnn needs image-shaped data")
        h, w = train.image_shape
        base = models.init("cnn", [h, w, train.class_count], cfg.seed)
    basis = analysis.image_basis(train.inputs) if nz["basis"] == "image" else None
    p = nz["p_noise"] if p_noise is None else p_noise
    spec = noise.make_spec(nz["dist"], train.dim, p, basis=basis, frozen=nz["frozen"])
    return noise.SnapNet(base, spec)


def _out_dir(cfg, output_dir=None):
    out = Path(output_dir) if output_dir else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_csv(path, header, rows, cfg: ExperimentConfig, extra_comments=()):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_sha256={cfg.digest()} seed={cfg.seed}\n")
        for c in extra_comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


METRIC_COLUMNS = ("epoch", "lr", "train_loss", "sigma_min", "sigma_mean", "sigma_max")


def train_from_config(cfg: ExperimentConfig, p_noise=None):
    train, test = load_datasets(cfg)
    net = build_net(cfg, train, p_noise)
    result = training.train(net, train, cfg.train_spec(), cfg.seed)
    return result, train, test


def cmd_train(config_path, overrides=(), output_dir=None):
    cfg = load_config(config_path, overrides)
    out = _out_dir(cfg, output_dir)
    result, _, _ = train_from_config(cfg)
    write_csv(out / "metrics.csv", METRIC_COLUMNS,
              [[row[c] for c in METRIC_COLUMNS] for row in result.history], cfg)
    write_csv(out / "timings.csv", ("epoch", "base_seconds", "update_seconds"),
              [[r["epoch"], r["base_seconds"], r["update_seconds"]] for r in result.history], cfg)
    ckpt = out / "model.snap"
    checkpoint.save_checkpoint(ckpt, result.net, epoch=cfg["train"]["epochs"], seed=cfg.seed)
    log.info("wrote %s and %s", ckpt, out / "metrics.csv")
    return {"checkpoint": ckpt, "metrics": out / "metrics.csv", "timings": out / "timings.csv",
            "history": result.history}


def evaluate(cfg: ExperimentConfig, net, test: data.Dataset):
    n = cfg["eval"]["n_examples"] or len(test)
    x, y = test.inputs[:n], test.labels[:n]
    return attacks.eval_union(net, x, y, cfg.attack_specs(), cfg["eval"]["n0_samples"],
                              cfg.seed, batch_size=cfg["eval"]["batch_size"])


REPORT_COLUMNS = ("A_nat", "A_linf", "A_l2", "A_l1", "A_union",
                  "eps_linf", "eps_l2", "eps_l1", "steps", "restarts", "eot_samples", "n0_samples")


def _report_row(cfg, rep):
    a = cfg["attack"]
    return [rep.nat, rep.linf, rep.l2, rep.l1, rep.union, a["linf_eps"], a["l2_eps"], a["l1_eps"],
            a["steps"], cfg["eval"]["restarts"], a["eot_samples"], cfg["eval"]["n0_samples"]]


def cmd_eval_union(checkpoint_path, config_path, overrides=(), output_dir=None):
    cfg = load_config(config_path, overrides)
    out = _out_dir(cfg, output_dir)
    ckpt = checkpoint.load_checkpoint(checkpoint_path)
    _, test = load_datasets(cfg)
    rep = evaluate(cfg, ckpt.net, test)
    row = _report_row(cfg, rep)
    write_csv(out / "report.csv", REPORT_COLUMNS, [row], cfg)
    write_csv(out / "attacks.csv", ("example", "norm", "eps", "success", "loss"),
              [[r["example"], r["norm"], r["eps"], int(r["success"]), r["loss"]] for r in rep.records], cfg)
    print(" ".join(f"{k}={v}" for k, v in zip(REPORT_COLUMNS, row)))
    return {"report": out / "report.csv", "attacks": out / "attacks.csv", "result": rep}


SWEEP_COLUMNS = ("p_noise", "A_nat", "A_linf", "A_l2", "A_l1", "A_union")


def cmd_sweep_pnoise(config_path, p_values, overrides=(), output_dir=None):
    if not p_values:
        raise ConfigError("p_noise list must not be empty")
    cfg = load_config(config_path, overrides)
    out = _out_dir(cfg, output_dir)
    rows = []
    for p in p_values:
        result, _, test = train_from_config(cfg, float(p))
        rep = evaluate(cfg, result.net, test)
        rows.append([float(p), rep.nat, rep.linf, rep.l2, rep.l1, rep.union])
        log.info("p_noise=%g union=%.3f", p, rep.union)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows, cfg)
    return {"sweep": out / "sweep.csv", "rows": rows}


def cmd_subspace(vanilla_path, robust_path, config_path, overrides=(), output_dir=None):
    cfg = load_config(config_path, overrides)
    out = _out_dir(cfg, output_dir)
    van = checkpoint.load_checkpoint(vanilla_path).net
    rob = checkpoint.load_checkpoint(robust_path).net
    _, test = load_datasets(cfg)
    n = cfg["eval"]["n_examples"] or len(test)
    reports = analysis.subspace_experiment(van, rob, test.inputs[:n], test.labels[:n],
                                           cfg.attack_specs(), cfg.seed)
    rows, summary = [], []
    for name, rep in zip(("vanilla", "robust"), reports):
        for fam in analysis.FAMILIES:
            rows += [[name, fam, j, float(v)] for j, v in enumerate(rep.msp[fam])]
            summary.append([name, fam, rep.effective_dim[fam], rep.rank])
    write_csv(out / "subspace.csv", ("net", "family", "index", "msp"), rows, cfg)
    write_csv(out / "subspace_summary.csv", ("net", "family", "effective_dim", "rank"), summary, cfg)
    for row in summary:
        print(f"{row[0]:8s} {row[1]:5s} effective_dim={row[2]}")
    return {"subspace": out / "subspace.csv", "summary": out / "subspace_summary.csv", "reports": reports}


def cmd_noise_hist(config_path, threshold, samples, checkpoint_path=None, overrides=(), output_dir=None):
    cfg = load_config(config_path, overrides)
    out = _out_dir(cfg, output_dir)
    if checkpoint_path:
        spec = checkpoint.load_checkpoint(checkpoint_path).net.noise
    else:
        train, _ = load_datasets(cfg)
        spec = build_net(cfg, train).noise
    hist = analysis.noise_magnitude_histogram(spec, threshold, samples, cfg.seed)
    rows = [[lo, hi, int(c)] for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts)]
    write_csv(out / "hist.csv", ("bin_lo", "bin_hi", "count"), rows, cfg,
              extra_comments=(f"threshold={threshold!r} samples={samples} mean_fraction={hist.mean_fraction!r}",))
    print(f"mean_fraction={hist.mean_fraction:.6f}")
    return {"hist": out / "hist.csv", "histogram": hist}


def _floats_arg(text):
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="snaplab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
        sp.add_argument("--output-dir")
        return sp

    common(sub.add_parser("train", help="train a (SNAP-augmented) classifier"))
    sp = common(sub.add_parser("eval-union", help="natural / per-norm / union accuracy"))
    sp.add_argument("--checkpoint", required=True)
    sp = common(sub.add_parser("sweep-pnoise", help="train and evaluate one model per noise power"))
    sp.add_argument("--p-noise", required=True, type=_floats_arg)
    sp = common(sub.add_parser("subspace", help="perturbation subspace profiles of two checkpoints"))
    sp.add_argument("--vanilla", required=True)
    sp.add_argument("--robust", required=True)
    sp = common(sub.add_parser("noise-hist", help="histogram of large-magnitude noise coordinates"))
    sp.add_argument("--checkpoint")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--samples", type=int, default=5000)
    return p


def run(args):
    kw = {"overrides": args.overrides, "output_dir": args.output_dir}
    if args.command == "train":
        return cmd_train(args.config, **kw)
    if args.command == "eval-union":
        return cmd_eval_union(args.checkpoint, args.config, **kw)
    if args.command == "sweep-pnoise":
        return cmd_sweep_pnoise(args.config, args.p_noise, **kw)
    if args.command == "subspace":
        return cmd_subspace(args.vanilla, args.robust, args.config, **kw)
    return cmd_noise_hist(args.config, args.threshold, args.samples, args.checkpoint, **kw)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        run(args)
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SnapError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
