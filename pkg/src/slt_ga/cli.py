"""Command-line driver: gen-data, run, prune, landscape, stats.

Every subcommand reads a JSON config (``--config``), takes an optional master
seed override (``--seed``) and writes into ``--out``. Repeat ``r`` of a run
uses seed ``master_seed + r`` for both the network initialization and the
search. Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import analysis, baselines, datasets, ga, landscape, net
from .errors import ArchitectureError, ConfigError, SltError

log = logging.getLogger("slt_ga")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


# -- config helpers ----------------------------------------------------------------


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_dataset(spec: dict) -> datasets.SplitDataset:
    """Materialize the dataset block of an experiment config."""
    kind = spec.get("kind")
    seed = int(spec.get("seed", 0))
    if kind == "csv":
        train = datasets.Dataset.from_csv(spec["train"])
        test = datasets.Dataset.from_csv(spec["test"])
        k = max(train.class_count, test.class_count, int(spec.get("classes") or 0))
        return datasets.SplitDataset(
            datasets.Dataset(train.features, train.labels, k),
            datasets.Dataset(test.features, test.labels, k),
            len(test) / (len(train) + len(test)),
        )
    if kind == "moons":
        data = datasets.gen_moons(int(spec.get("n", 66000)), float(spec.get("noise", datasets.DEFAULT_NOISE)), seed)
    elif kind == "circles":
        data = datasets.gen_circles(int(spec.get("n", 66000)), float(spec.get("noise", datasets.DEFAULT_NOISE)), seed,
                                    float(spec.get("factor", 0.5)))
    elif kind == "blobs":
        data = datasets.gen_blobs(int(spec.get("n", 50000)), int(spec.get("classes", 10)), seed,
                                  float(spec.get("cluster_std", 1.0)))
    elif kind == "digits":
        classes = spec.get("classes", 10)
        classes = range(classes) if isinstance(classes, int) else classes
        data = datasets.load_digits(spec.get("path"), classes)
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    if spec.get("normalize") is not None:
        lo, hi = spec["normalize"]
        data = datasets.minmax_normalize(data, float(lo), float(hi))
    return datasets.split(data, float(spec.get("test_fraction", 0.25)), int(spec.get("split_seed", 0)))


def build_arch(arch_spec, data: datasets.SplitDataset) -> net.NetworkArch:
    if isinstance(arch_spec, str):
        return net.NetworkArch.named(arch_spec, data.train.dim, data.class_count)
    arch = net.NetworkArch(tuple(arch_spec))
    if arch.in_width != data.train.dim or arch.out_width != data.class_count:
        raise ConfigError(f"architecture {arch.layer_widths} does not fit data "
                          f"({data.train.dim} features, {data.class_count} classes)")
    return arch


def prepare_out(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"{out} exists and is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)


def metadata() -> dict:
    return {"created": datetime.datetime.now(datetime.timezone.utc).isoformat()}


# -- gen-data ----------------------------------------------------------------------


def cmd_gen_data(cfg: dict, out: Path, seed: int | None) -> int:
    spec = dict(cfg.get("dataset", cfg))
    if seed is not None:
        spec["seed"] = seed
    data = build_dataset(spec)
    data.train.to_csv(out / "train.csv")
    data.test.to_csv(out / "test.csv")
    write_json(out / "manifest.json", {
        "dataset": spec,
        "rows": {"train": len(data.train), "test": len(data.test)},
        "class_count": data.class_count,
        "sha256": {name: sha256(out / name) for name in ("train.csv", "test.csv")},
        "metadata": metadata(),
    })
    return EXIT_OK


# -- run -----------------------------------------------------------------------------


def _run_ga(algo: dict, arch, data, seed: int, workers: int, rdir: Path) -> dict:
    opts = dict(algo.get("config", {}))
    init = opts.pop("init", {"lo": -1.0, "hi": 1.0})
    post_prune = bool(opts.pop("post_prune", False))
    cfg = ga.GaConfig.from_json({**opts, "master_seed": seed})
    params = net.init_network(arch, net.Uniform(float(init["lo"]), float(init["hi"])), seed)
    res = ga.evolve(cfg, params, data, workers=workers)
    write_json(rdir / "params.json", params.to_json())
    write_json(rdir / "mask.json", net.mask_to_json(res.best_mask))
    (rdir / "history.csv").write_text(res.history_csv(), encoding="utf-8")
    doc = {
        "generations_run": res.generations_run,
        "final_bound": res.final_bound,
        "train": res.best_train_metrics.to_json(),
        "test": res.best_test_metrics.to_json(),
        "mask": "mask.json",
    }
    if post_prune:
        pruned = ga.post_evolutionary_prune(res.best_mask, params, data.train)
        write_json(rdir / "pruned_mask.json", net.mask_to_json(pruned))
        doc["pruned"] = {
            "train": net.evaluate(params, data.train, pruned).to_json(),
            "test": net.evaluate(params, data.test, pruned).to_json(),
            "mask": "pruned_mask.json",
        }
    return doc


def _epochs_csv(losses, extra=None) -> str:
    lines = ["epoch,train_loss" + ("," + extra[0] if extra else "")]
    for i, loss in enumerate(losses):
        row = f"{i},{loss!r}"
        if extra:
            row += f",{extra[1][i]!r}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def _run_edge_popup(algo: dict, arch, data, seed: int, rdir: Path) -> dict:
    cfg = baselines.EdgePopupConfig.from_json({**algo.get("config", {}), "seed": seed})
    res = baselines.edge_popup_train(arch, data.train, cfg)
    write_json(rdir / "params.json", res.params.to_json())
    write_json(rdir / "mask.json", net.mask_to_json(res.mask))
    (rdir / "epochs.csv").write_text(_epochs_csv(res.losses), encoding="utf-8")
    return {
        "train": net.evaluate(res.params, data.train, res.mask).to_json(),
        "test": net.evaluate(res.params, data.test, res.mask).to_json(),
        "retained_per_layer": res.retained[-1],
        "mask": "mask.json",
    }


def _run_backprop(algo: dict, arch, data, seed: int, rdir: Path) -> dict:
    cfg = baselines.BackpropConfig.from_json({**algo.get("config", {}), "seed": seed})
    res = baselines.train_backprop(arch, data.train, cfg)
    write_json(rdir / "params.json", res.params.to_json())
    (rdir / "epochs.csv").write_text(_epochs_csv(res.losses, ("learning_rate", res.learning_rates)), encoding="utf-8")
    return {
        "train": net.evaluate(res.params, data.train).to_json(),
        "test": net.evaluate(res.params, data.test).to_json(),
        "mask": None,
    }


def run_repeat(cfg: dict, data, arch, seed: int, index: int, workers: int, rdir: Path) -> dict:
    algo = cfg["algorithm"]
    name = algo.get("name")
    if name == "ga":
        body = _run_ga(algo, arch, data, seed, workers, rdir)
    elif name == "edge_popup":
        body = _run_edge_popup(algo, arch, data, seed, rdir)
    elif name == "backprop":
        body = _run_backprop(algo, arch, data, seed, rdir)
    else:
        raise ConfigError(f"unknown algorithm {name!r}")
    doc = {"algorithm": name, "repeat": index, "seed": seed, "arch": list(arch.layer_widths),
           "params": "params.json", "config": cfg, **body}
    write_json(rdir / "result.json", doc)
    return doc


def cmd_run(cfg: dict, out: Path, seed: int | None, workers: int = 1) -> int:
    for key in ("dataset", "arch", "algorithm"):
        if key not in cfg:
            raise ConfigError(f"run config needs a {key!r} block")
    cfg = dict(cfg)
    if seed is not None:
        cfg["master_seed"] = seed
    master = int(cfg.get("master_seed", 0))
    repeats = int(cfg.get("repeats", 1))
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    data = build_dataset(cfg["dataset"])
    arch = build_arch(cfg["arch"], data)
    write_json(out / "config.json", cfg)

    status = []
    for r in range(repeats):
        s = master + r
        rdir = out / f"repeat_{r:03d}"
        rdir.mkdir(exist_ok=True)
        try:
            doc = run_repeat(cfg, data, arch, s, r, workers, rdir)
            log.info("repeat %d (seed %d): test accuracy %.4f", r, s, doc["test"]["accuracy"])
            status.append({"repeat": r, "seed": s, "status": "ok"})
        except (ConfigError, ArchitectureError):
            raise
        except Exception as exc:  # keep going; the failure marker records it
            (rdir / "FAILED").write_text(traceback.format_exc(), encoding="utf-8")
            log.error("repeat %d (seed %d) failed: %s", r, s, exc)
            status.append({"repeat": r, "seed": s, "status": "failed", "error": str(exc)})
    write_json(out / "manifest.json", {"repeats": status, "master_seed": master, "metadata": metadata()})
    return EXIT_OK if all(st["status"] == "ok" for st in status) else EXIT_RUNTIME


# -- prune / landscape / stats -----------------------------------------------------------


def repeat_dirs(run_dir: Path) -> list[Path]:
    if (run_dir / "result.json").exists():
        return [run_dir]
    dirs = sorted(p.parent for p in run_dir.glob("repeat_*/result.json"))
    if not dirs:
        raise ConfigError(f"no run results found under {run_dir}")
    return dirs


def load_repeat(rdir: Path):
    result = read_json(rdir / "result.json")
    params = net.ParamVector.from_json(read_json(rdir / result["params"]))
    mask = net.mask_from_json(read_json(rdir / result["mask"])) if result.get("mask") else net.ones_mask(params.arch)
    data = build_dataset(result["config"]["dataset"])
    return result, params, mask, data


def cmd_prune(cfg: dict, out: Path, seed: int | None) -> int:
    if "run_dir" not in cfg:
        raise ConfigError("prune config needs 'run_dir'")
    max_passes = cfg.get("max_passes")
    for rdir in repeat_dirs(Path(cfg["run_dir"])):
        result, params, mask, data = load_repeat(rdir)
        pruned = ga.post_evolutionary_prune(mask, params, data.train, max_passes)
        target = out / rdir.name
        target.mkdir(exist_ok=True)
        write_json(target / "pruned_mask.json", net.mask_to_json(pruned))
        write_json(target / "prune.json", {
            "source": str(rdir),
            "before": {"train": net.evaluate(params, data.train, mask).to_json(),
                       "test": net.evaluate(params, data.test, mask).to_json()},
            "after": {"train": net.evaluate(params, data.train, pruned).to_json(),
                      "test": net.evaluate(params, data.test, pruned).to_json()},
        })
    return EXIT_OK


def cmd_landscape(cfg: dict, out: Path, seed: int | None) -> int:
    if "run_dir" not in cfg:
        raise ConfigError("landscape config needs 'run_dir'")
    rdir = repeat_dirs(Path(cfg["run_dir"]))[0]
    _, params, mask, data = load_repeat(rdir)
    split = cfg.get("split", "train")
    if split not in ("train", "test"):
        raise ConfigError("split must be 'train' or 'test'")
    subset = data.train if split == "train" else data.test
    w_s = params.apply_mask(mask)
    d_seed = int(cfg.get("seed", 0)) if seed is None else seed
    kw = {}
    if cfg.get("layer_normalize"):
        kw.update(reference=w_s, layer_normalize=True)
    if cfg.get("restrict_to_active"):
        kw["active_mask"] = mask
    d1, d2 = landscape.sample_directions(params.arch.param_count, d_seed, **kw)
    lo, hi = cfg.get("range", [-1.0, 1.0])
    grid = landscape.landscape_grid(w_s, d1, d2, float(lo), float(hi), int(cfg.get("resolution", 51)),
                                    cfg.get("metric", landscape.LOSS), subset, d_seed, d_seed + 1)
    (out / "landscape.csv").write_text(grid.to_csv(), encoding="utf-8")
    write_json(out / "landscape.json", {**grid.header(), "split": split, "source": str(rdir),
                                        "layer_normalize": bool(cfg.get("layer_normalize")),
                                        "restrict_to_active": bool(cfg.get("restrict_to_active"))})
    eig = cfg.get("eigen")
    if eig:
        probe = landscape.top_eigenvalues(w_s, subset, int(eig.get("m", 3)), int(eig.get("max_iters", 300)),
                                          float(eig.get("tol", 1e-6)), int(eig.get("seed", d_seed)))
        write_json(out / "eigen.json", probe.to_json())
    return EXIT_OK


def cmd_stats(cfg: dict, out: Path, seed: int | None) -> int:
    groups = cfg.get("groups")
    if not groups:
        raise ConfigError("stats config needs a non-empty 'groups' mapping")
    metric = cfg.get("metric", "test.accuracy")
    values = {label: analysis.load_run_values(path, metric) for label, path in groups.items()}
    rows = analysis.compare_table(values)
    (out / "stats.csv").write_text(analysis.to_csv(rows), encoding="utf-8")
    (out / "stats.txt").write_text(analysis.to_text(rows), encoding="utf-8")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "run": cmd_run,
    "prune": cmd_prune,
    "landscape": cmd_landscape,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slt-ga", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="write into a non-empty output directory")
        p.add_argument("--workers", type=int, default=1, help="threads for fitness evaluation")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = read_json(args.config)
        prepare_out(out, args.force)
        if args.command == "run":
            return cmd_run(cfg, out, args.seed, args.workers)
        return COMMANDS[args.command](cfg, out, args.seed)
    except (ConfigError, ArchitectureError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SltError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
