"""Command-line entry point: ``pasnet <command> [options]``.

Every command writes its numeric outputs plus a ``manifest.json`` into
``--out``. Numeric files depend only on the inputs and seeds, so re-running a
command reproduces them byte for byte; only the manifest records wall time.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bench, models
from .data import (generate_dataset, load_dataset, metrics_for,
                   save_dataset, snr_of, threshold_activation)
from .geometry import SystemConfig, achievable_rate, load_config, to_db
from .models import LossConfig, ModelDims
from .solver import BRUTE_FORCE_MAX_N, Method
from .training import TrainConfig, train

log = logging.getLogger("pasnet")

METHODS = {"brute": Method.BRUTE_FORCE, "dinkelbach": Method.DINKELBACH,
           "sweep": Method.ANGLE_SWEEP}


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


# ---------------------------------------------------------------------------
# manifests and plot-data files


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    inputs: dict = field(default_factory=dict)  # path -> content digest
    parameters: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    duration_s: float = 0.0

    @property
    def digest(self) -> str:
        body = {k: v for k, v in asdict(self).items() if k not in ("outputs", "duration_s")}
        body["inputs"] = sorted(self.inputs.values())
        return bench.digest(body)

    def write(self, out_dir):
        path = os.path.join(out_dir, "manifest.json")
        body = asdict(self)
        body["digest"] = self.digest
        with open(path, "w") as fh:
            json.dump(body, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _fmt(v) -> str:
    return repr(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))


def write_curve(out_dir, name, x, y, manifest: RunManifest, xlabel="x", ylabel="y"):
    x, y = list(x), list(y)
    if len(x) != len(y):
        raise ValueError("curve coordinates differ in length")
    if any(b <= a for a, b in zip(x, x[1:])):
        raise ValueError(f"curve {name}: x values must be strictly increasing")
    path = os.path.join(out_dir, f"{name}.dat")
    with open(path, "w") as fh:
        fh.write(f"# manifest {manifest.digest}\n# {xlabel} {ylabel}\n")
        for a, b in zip(x, y):
            fh.write(f"{_fmt(a)} {_fmt(b)}\n")
    manifest.outputs.append(path)
    return path


def write_json(out_dir, name, payload, manifest: RunManifest):
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.outputs.append(path)
    return path


# ---------------------------------------------------------------------------
# argument helpers


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _resolve(args):
    if args.config:
        config, seed = load_config(args.config)
    else:
        config, seed = SystemConfig(), 0
    if args.seed is not None:
        seed = args.seed
    return config, seed


def _manifest(args, config, seed, **parameters):
    return RunManifest(command=args.command, config=asdict(config), seeds={"seed": seed},
                       parameters=parameters)


def _read_dataset(path, manifest):
    ds = load_dataset(path)
    manifest.inputs[path] = file_digest(path)
    return ds


def _read_model(path, manifest):
    model = models.load_checkpoint(path)
    manifest.inputs[path] = file_digest(path)
    return model


def _finish(manifest, out_dir, started):
    manifest.duration_s = round(time.time() - started, 3)
    manifest.outputs.append(os.path.join(out_dir, "manifest.json"))
    manifest.write(out_dir)


def _train_config(args, seed) -> TrainConfig:
    values = {}
    if args.hyper:
        with open(args.hyper) as fh:
            values = json.load(fh)
    if "loss_config" in values:
        lc = values["loss_config"]
        values["loss_config"] = LossConfig(**{k: tuple(v) if isinstance(v, list) else v
                                              for k, v in lc.items()})
    if "dims" in values:
        values["dims"] = ModelDims(**values["dims"])
    values["loss"] = args.loss
    values.setdefault("seed", seed)
    if args.iterations is not None:
        values["iterations"] = args.iterations
    return TrainConfig(**values)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    config, seed = _resolve(args)
    manifest = _manifest(args, config, seed, count=args.count, method=args.method)
    with _Stage("generate"):
        if args.method == "brute" and config.n_antennas > BRUTE_FORCE_MAX_N:
            raise ValueError(f"brute force is limited to N <= {BRUTE_FORCE_MAX_N}")
        ds = generate_dataset(config, args.count, seed, METHODS[args.method])
    with _Stage("write"):
        path = os.path.join(args.out, "dataset.jsonl")
        save_dataset(ds, path)
        manifest.outputs.append(path)
    print(f"wrote {len(ds)} instances to {path}")
    return manifest


def cmd_solve(args):
    config, seed = _resolve(args)
    with _Stage("solve"):
        sol = bench.solve_user(config, args.user, METHODS[args.method])
    print(f"activation {sol.bitstring()}")
    print(f"N_a {sol.n_active}")
    print(f"snr_db {to_db(sol.snr):.6f}")
    print(f"snr_linear {sol.snr!r}")
    print(f"rate_bps_hz {achievable_rate(sol.snr):.6f}")
    print(f"method {Method(sol.method).value}")
    return None


def cmd_train(args):
    config, seed = _resolve(args)
    with _Stage("load datasets"):
        manifest = _manifest(args, config, seed, model=args.model, loss=args.loss)
        tr = _read_dataset(args.train, manifest)
        va = _read_dataset(args.val, manifest) if args.val else None
    with _Stage("configure"):
        cfg = _train_config(args, seed)
        manifest.parameters["train_config"] = json.loads(json.dumps(asdict(cfg), default=str))
    with _Stage("train"):
        model, curves = train(args.model, tr, va, cfg)
    with _Stage("write"):
        path = os.path.join(args.out, "checkpoint.npz")
        models.save_checkpoint(model, path, extra={"loss": cfg.loss})
        manifest.outputs.append(path)
        for name in ("train_loss", "train_accuracy", "val_accuracy"):
            write_curve(args.out, name, curves.iteration, getattr(curves, name), manifest,
                        "iteration", name)
    print(f"final train accuracy {curves.train_accuracy[-1]:.4f}"
          f" val accuracy {curves.val_accuracy[-1]:.4f}" if curves.iteration else "no iterations")
    return manifest


def cmd_eval(args):
    config, seed = _resolve(args)
    manifest = _manifest(args, config, seed, policy=args.checkpoint or args.baseline)
    with _Stage("load"):
        ds = _read_dataset(args.dataset, manifest)
        model = _read_model(args.checkpoint, manifest) if args.checkpoint else None
    with _Stage("evaluate"):
        if model is not None:
            _, probs = models.predict(model, ds.gains)
            bits, empty = threshold_activation(probs)
            metrics = metrics_for(ds, bits, int(empty.sum()))
        elif args.baseline == "labels":
            bits = ds.labels.copy()
            metrics = metrics_for(ds, bits)
        else:
            if args.reference is None:
                raise ValueError("the nearest baseline needs --reference to match cardinality")
            ref = _read_model(args.reference, manifest)
            counts = bench.model_bits(ref, ds).sum(axis=1)
            bits = bench.nearest_policy_bits(ds, counts)
            metrics = metrics_for(ds, bits)
    with _Stage("write"):
        write_json(args.out, "metrics.json", metrics.as_dict(), manifest)
        path = os.path.join(args.out, "per_instance.tsv")
        ratio = snr_of(ds.gains, bits, ds.config.rho) / ds.gamma_star if len(ds) else []
        with open(path, "w") as fh:
            fh.write("# index snr_ratio n_active bitstring\n")
            for i, (r, b) in enumerate(zip(ratio, bits)):
                fh.write(f"{i} {float(r)!r} {int(b.sum())} {''.join('1' if v else '0' for v in b)}\n")
        manifest.outputs.append(path)
    for key, value in metrics.as_dict().items():
        print(f"{key} {value}")
    return manifest


def _bench_dataset(args, config, seed, manifest, n=None):
    if getattr(args, "dataset", None):
        return _read_dataset(args.dataset, manifest)
    cfg = config.with_antennas(n) if n else config
    return generate_dataset(cfg, args.count, seed)


def cmd_bench_topk(args):
    config, seed = _resolve(args)
    manifest = _manifest(args, config, seed, fractions=args.fraction_grid, count=args.count)
    with _Stage("load"):
        model = _read_model(args.checkpoint, manifest)
        ds = _bench_dataset(args, config, seed, manifest)
    with _Stage("top-k sweep"):
        curves = bench.topk_curves(model, ds, args.fraction_grid)
    with _Stage("write"):
        for c in curves:
            write_curve(args.out, f"topk_{c.name}", c.x, c.y, manifest, "fraction", "snr_accuracy")
    return manifest


def cmd_bench_activation_ratio(args):
    config, seed = _resolve(args)
    manifest = _manifest(args, config, seed, n_grid=args.n_grid, count=args.count)
    with _Stage("load"):
        model = _read_model(args.checkpoint, manifest) if args.checkpoint else None
    with _Stage("activation ratio sweep"):
        curves = bench.activation_ratio_curves(config, args.n_grid, args.count, seed, model)
    with _Stage("write"):
        for c in curves:
            write_curve(args.out, f"activation_ratio_{c.name}", c.x, c.y, manifest, "N", "ratio")
            for n, r in zip(c.x, c.y):
                print(f"{c.name} N={n} ratio={r:.4f}")
    return manifest


def cmd_bench_snr_vs_n(args):
    config, seed = _resolve(args)
    manifest = _manifest(args, config, seed, n_grid=args.n_grid, count=args.count)
    with _Stage("load"):
        model = _read_model(args.checkpoint, manifest) if args.checkpoint else None
    with _Stage("snr sweep"):
        curves = bench.snr_vs_n_curves(config, args.n_grid, args.count, seed, model)
    with _Stage("write"):
        for c in curves:
            unit = "db" if c.name.endswith("_db") else "linear"
            write_curve(args.out, f"snr_{c.name}", c.x, c.y, manifest, "N", f"mean_snr_{unit}")
            if unit == "db":
                for n, v in zip(c.x, c.y):
                    print(f"{c.name[:-3]} N={n} {v:.3f} dB")
    return manifest


def cmd_bench_noise(args):
    config, seed = _resolve(args)
    manifest = _manifest(args, config, seed, sigmas=args.sigma_grid, mc_samples=args.mc_samples,
                         planar=args.planar, count=args.count)
    with _Stage("load"):
        model = _read_model(args.checkpoint, manifest)
        ds = _bench_dataset(args, config, seed, manifest)
    with _Stage("monte carlo"):
        curves = bench.noise_curves(model, ds, args.sigma_grid, args.mc_samples, seed, args.planar)
    with _Stage("write"):
        for c in curves:
            write_curve(args.out, f"noise_{c.name}", c.x, c.y, manifest, "sigma_p", c.name)
    for s, a, b in zip(curves[0].x, curves[0].y, curves[1].y):
        print(f"sigma={s:g} model={a:.4f} baseline={b:.4f}")
    return manifest


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' system config file")
    common.add_argument("--seed", type=int, help="overrides rng_seed from the config")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pasnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="generate a labelled dataset")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--method", choices=sorted(METHODS), default="sweep")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("solve", parents=[common], help="solve one user position exactly")
    s.add_argument("--user", type=float, nargs=3, metavar=("X", "Y", "Z"), required=True)
    s.add_argument("--method", choices=sorted(METHODS), default="sweep")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("train", parents=[common], help="train a policy")
    s.add_argument("--model", choices=list(models.KINDS), required=True)
    s.add_argument("--loss", choices=["bce", "augmented"], default="bce")
    s.add_argument("--train", required=True, help="training dataset file")
    s.add_argument("--val", help="validation dataset file")
    s.add_argument("--hyper", help="JSON file of training hyperparameters")
    s.add_argument("--iterations", type=int, help="override the iteration count")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or baseline")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--baseline", choices=["labels", "nearest"])
    s.add_argument("--reference", help="checkpoint whose cardinality the nearest baseline matches")
    s.add_argument("--dataset", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench-topk", parents=[common], help="top-K refinement curve")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", help="dataset file; generated from the config when omitted")
    s.add_argument("--count", type=int, default=200)
    s.add_argument("--fraction-grid", type=_float_list,
                   default=[round(0.1 * i, 1) for i in range(1, 21)])
    s.set_defaults(func=cmd_bench_topk)

    s = sub.add_parser("bench-activation-ratio", parents=[common],
                       help="activation ratio versus N")
    s.add_argument("--checkpoint")
    s.add_argument("--n-grid", type=_int_list, default=[50, 100, 200, 500])
    s.add_argument("--count", type=int, default=200)
    s.set_defaults(func=cmd_bench_activation_ratio)

    s = sub.add_parser("bench-snr-vs-n", parents=[common], help="mean SNR versus N")
    s.add_argument("--checkpoint")
    s.add_argument("--n-grid", type=_int_list, default=[50, 100, 200, 500])
    s.add_argument("--count", type=int, default=200)
    s.set_defaults(func=cmd_bench_snr_vs_n)

    s = sub.add_parser("bench-noise", parents=[common], help="accuracy under position noise")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", help="dataset file; generated from the config when omitted")
    s.add_argument("--count", type=int, default=200)
    s.add_argument("--sigma-grid", type=_float_list, default=[0.0, 0.05, 0.1, 0.2, 0.3, 0.4])
    s.add_argument("--mc-samples", type=int, default=32)
    s.add_argument("--planar", action="store_true", help="perturb x and y only")
    s.set_defaults(func=cmd_bench_noise)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        with _Stage("config"):
            os.makedirs(args.out, exist_ok=True)
        manifest = args.func(args)
        if manifest is not None:
            _finish(manifest, args.out, started)
    except StageError as exc:
        print(f"pasnet {args.command}: failed in stage {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
