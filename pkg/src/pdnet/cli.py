"""Batch command-line driver.

One JSON configuration document describes a run (task, degradation, network,
training, data, seed, output directory); flags exist only for paths, seed
override, and verbosity.  Subcommands:

    degrade         synthesize a degraded dataset + manifest
    train           fit a network; writes models, history CSV, filter grids
    eval            PSNR/SSIM tables, optional robustness sweep over beta
    solve           unsupervised primal-dual restoration per image
    gradcheck       analytic vs finite-difference gradients on a small instance
    export-filters  PGM grid of the last layer's analysis rows

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 gradcheck
failure.  Every artifact lands under the configured output directory next to
a byte-for-byte snapshot of the config that produced it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import re
import shutil
import sys

import numpy as np

from . import data as datamod
from . import network as netmod
from .backprop import backward, compare_gradients, finite_diff_gradients
from .network import BlockSpec, DenseSpec, ModelFormatError
from .operators import (
    degradation_from_spec,
    make_first_difference,
    make_scaled_identity_analysis,
)
from .pdhg import StepSizes, pdhg_solve
from .rng import Stream, derive
from .training import TrainConfig, TrainingDivergedError, train


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

_SCHEMA = {
    "task": {"deblur", "sr"},
    "seed": int,
    "output_dir": str,
    "degradation": {
        "kind": {"uniform-blur", "decimation", "identity"},
        "size": int,
        "factor": int,
        "alpha": (int, float),
    },
    "data": {
        "source": {"synthetic", "idx", "pgm-dir", "degraded-dir"},
        "count": int,
        "image_side": int,
        "images": str,
        "labels": str,
        "path": str,
        "limit": int,
        "patch_size": int,
        "patches_per_image": int,
        "train_frac": (int, float),
        "val_frac": (int, float),
    },
    "network": {
        "K": int,
        "mode": {"full", "partial"},
        "L": list,
        "init_stddev": (int, float),
    },
    "train": {
        "gamma": (int, float),
        "batch_size": int,
        "max_iter": int,
        "val_cadence": int,
        "lr_decay_every": int,
        "lr_decay_factor": (int, float),
    },
    "solve": {
        "prior": {"identity", "first-diff"},
        "lambda": (int, float),
        "tau": (int, float),
        "sigma": (int, float),
        "tol": (int, float),
        "max_iter": int,
    },
}

_REQUIRED = {"seed", "output_dir"}


def _check_section(name: str, value, schema) -> None:
    if isinstance(schema, set):
        if value not in schema:
            raise ConfigError(f"{name}: {value!r} not in {sorted(schema)}")
    elif isinstance(schema, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{name}: expected an object")
        for key, sub in value.items():
            if key not in schema:
                raise ConfigError(f"{name}.{key}: unknown key")
            if sub is not None:
                _check_section(f"{name}.{key}", sub, schema[key])
    elif schema is list:
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list")
    else:
        if isinstance(value, bool) or not isinstance(value, schema):
            raise ConfigError(f"{name}: expected {schema}, got {type(value).__name__}")


def load_config(path: str, seed_override=None, output_override=None) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    for key in cfg:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown top-level key {key!r}")
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    if output_override is not None:
        cfg["output_dir"] = output_override
    for key in _REQUIRED:
        if key not in cfg:
            raise ConfigError(f"missing required config key {key!r}")
    for key, value in cfg.items():
        _check_section(key, value, _SCHEMA[key])
    return cfg


_LSPEC_RE = re.compile(r"^f(\d+)s(\d+)n(\d+)$")


def parse_l_spec(entry) -> DenseSpec | BlockSpec:
    """L entries: "dense:P", "fQsSnF" strings, or {"spec":..., "site_rule":...}."""
    site_rule = "fit"
    if isinstance(entry, dict):
        extra = set(entry) - {"spec", "site_rule"}
        if extra:
            raise ConfigError(f"unknown L spec keys {sorted(extra)}")
        site_rule = entry.get("site_rule", "fit")
        if site_rule not in ("fit", "interior"):
            raise ConfigError(f"bad site_rule {site_rule!r}")
        entry = entry.get("spec")
    if not isinstance(entry, str):
        raise ConfigError(f"bad L spec {entry!r}")
    if entry.startswith("dense:"):
        try:
            p = int(entry.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad dense spec {entry!r}") from exc
        if p < 1:
            raise ConfigError(f"dense spec needs P >= 1, got {p}")
        return DenseSpec(p)
    m = _LSPEC_RE.match(entry)
    if not m:
        raise ConfigError(f"bad L spec {entry!r} (want 'dense:P' or 'fQsSnF')")
    q, stride, filters = (int(g) for g in m.groups())
    if min(q, stride, filters) < 1:
        raise ConfigError(f"L spec {entry!r} fields must be positive")
    return BlockSpec(q, stride, filters, site_rule=site_rule)


# ---------------------------------------------------------------------------
# Shared assembly helpers
# ---------------------------------------------------------------------------


def _build_degradation(cfg: dict, side: int):
    d = cfg.get("degradation")
    if d is None:
        raise ConfigError("config needs a 'degradation' section")
    kind = d.get("kind")
    alpha = float(d.get("alpha", 0.0))
    if alpha < 0:
        raise ConfigError("alpha must be nonnegative")
    if kind == "uniform-blur":
        if "size" not in d:
            raise ConfigError("uniform-blur needs 'size'")
        spec = {"kind": kind, "size_or_factor": int(d["size"]), "image_side": side}
    elif kind == "decimation":
        if "factor" not in d:
            raise ConfigError("decimation needs 'factor'")
        spec = {"kind": kind, "size_or_factor": int(d["factor"]), "image_side": side}
    elif kind == "identity":
        # for identity the field holds the vector dimension
        spec = {"kind": kind, "size_or_factor": 1, "image_side": side * side}
    else:
        raise ConfigError(f"unknown degradation kind {kind!r}")
    try:
        return degradation_from_spec(spec), alpha
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_clean_images(cfg: dict):
    """Clean image stack (n, side*side) plus side, from the config source."""
    d = cfg.get("data")
    if d is None:
        raise ConfigError("config needs a 'data' section")
    source = d.get("source")
    limit = d.get("limit")
    if source == "synthetic":
        side = int(d.get("image_side", 28))
        count = int(d.get("count", 100))
        if side < 7:
            raise ConfigError("synthetic images need image_side >= 7")
        return datamod.synthetic_digits(count, side=side, seed=derive(cfg["seed"], 1)), side
    if source == "idx":
        if "images" not in d:
            raise ConfigError("idx source needs 'images'")
        images = datamod.load_idx(d["images"], d.get("labels"))
        if limit:
            images = images[:limit]
        if not images:
            raise ConfigError("idx source produced no images")
        side = images[0].side
        return np.stack([im.pixels for im in images]), side
    if source == "pgm-dir":
        if "path" not in d or "patch_size" not in d:
            raise ConfigError("pgm-dir source needs 'path' and 'patch_size'")
        q = int(d["patch_size"])
        per = int(d.get("patches_per_image", 16))
        files = sorted(f for f in os.listdir(d["path"]) if f.endswith(".pgm"))
        if limit:
            files = files[:limit]
        if not files:
            raise ConfigError(f"no .pgm files under {d['path']}")
        patches = []
        for i, fname in enumerate(files):
            raster = datamod.load_pgm(os.path.join(d["path"], fname))
            patches.extend(datamod.extract_patches(
                raster, q, per, derive(cfg["seed"], 2, i)))
        return np.stack([p.pixels for p in patches]), q
    if source == "degraded-dir":
        raise ConfigError("'degraded-dir' carries measurements; use _load_dataset")
    raise ConfigError(f"unknown data source {source!r}")


def _load_dataset(cfg: dict) -> datamod.Dataset:
    """Full dataset (clean + degraded) from either raw sources or a degrade dir."""
    d = cfg.get("data") or {}
    if d.get("source") == "degraded-dir":
        root = d.get("path")
        if not root:
            raise ConfigError("degraded-dir source needs 'path'")
        try:
            with open(os.path.join(root, "manifest.json"), "r", encoding="ascii") as f:
                manifest = json.load(f)
            clean = np.load(os.path.join(root, "clean.npy"))
            degraded = np.load(os.path.join(root, "degraded.npy"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load dataset dir {root}: {exc}") from exc
        return datamod.Dataset(side=int(manifest["side"]), clean=clean,
                               degraded=degraded,
                               degradation=manifest["degradation"],
                               noise_alpha=float(manifest["alpha"]),
                               seed=int(manifest["seed"]))
    clean, side = _load_clean_images(cfg)
    a_op, alpha = _build_degradation(cfg, side)
    return datamod.degrade_set(clean, side, a_op, alpha, derive(cfg["seed"], 3))


def _split_dataset(cfg: dict, dataset: datamod.Dataset):
    d = cfg.get("data") or {}
    train_frac = float(d.get("train_frac", 0.8))
    val_frac = float(d.get("val_frac", 0.2))
    return datamod.split(dataset, train_frac, val_frac, derive(cfg["seed"], 4))


def _eval_subset(cfg: dict, dataset: datamod.Dataset) -> datamod.Dataset:
    """Evaluation rows: the test split when nonempty, else val, else all."""
    d = cfg.get("data") or {}
    if float(d.get("train_frac", 0.8)) + float(d.get("val_frac", 0.2)) == 0:
        return dataset
    tr, va, te = _split_dataset(cfg, dataset)
    if len(te):
        return te
    return va if len(va) else dataset


def _prepare_output(cfg: dict, config_path: str) -> str:
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    shutil.copyfile(config_path, os.path.join(out, "config.json"))
    return out


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


def _fmt(x: float) -> str:
    return "identical" if math.isinf(x) else f"{x:.4f}"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_degrade(cfg: dict, config_path: str, verbose: bool) -> int:
    clean, side = _load_clean_images(cfg)
    a_op, alpha = _build_degradation(cfg, side)
    dataset = datamod.degrade_set(clean, side, a_op, alpha, derive(cfg["seed"], 3))
    out = _prepare_output(cfg, config_path)
    np.save(os.path.join(out, "clean.npy"), dataset.clean)
    np.save(os.path.join(out, "degraded.npy"), dataset.degraded)
    manifest = {
        "side": side,
        "count": len(dataset),
        "alpha": alpha,
        "seed": dataset.seed,
        "degradation": dataset.degradation,
        "norm_a": a_op.cached_norm,
        "files": {
            "clean.npy": _sha256(os.path.join(out, "clean.npy")),
            "degraded.npy": _sha256(os.path.join(out, "degraded.npy")),
        },
    }
    with open(os.path.join(out, "manifest.json"), "w", encoding="ascii") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    if verbose:
        print(f"wrote {len(dataset)} pairs to {out}")
    return 0


def _build_network(cfg: dict, a_op, seed: int):
    net = cfg.get("network")
    if net is None:
        raise ConfigError("config needs a 'network' section")
    if "K" not in net or "L" not in net or not net["L"]:
        raise ConfigError("network section needs 'K' and a nonempty 'L' list")
    specs = [parse_l_spec(e) for e in net["L"]]
    side = getattr(a_op, "side", None)
    for s in specs:
        if isinstance(s, BlockSpec) and side is not None and s.q > side:
            raise ConfigError(f"L window {s.q} exceeds image side {side}")
    mode = net.get("mode", "full")
    stddev = float(net.get("init_stddev", 1e-2))
    try:
        return netmod.init_network(a_op, int(net["K"]), specs, mode,
                                   derive(seed, 5), stddev=stddev)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _train_config(cfg: dict, mode: str) -> TrainConfig:
    t = cfg.get("train")
    if t is None:
        raise ConfigError("config needs a 'train' section")
    try:
        return TrainConfig(
            gamma=float(t.get("gamma", 1e-9)),
            batch_size=int(t.get("batch_size", 50)),
            max_iter=int(t.get("max_iter", 1000)),
            mode=mode,
            seed=derive(cfg["seed"], 6),
            val_cadence=int(t.get("val_cadence", 100)),
            lr_decay_every=t.get("lr_decay_every"),
            lr_decay_factor=float(t.get("lr_decay_factor", 0.5)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def export_filter_grids(params: netmod.NetworkParams, out_dir: str,
                        prefix: str = "filters") -> list[str]:
    """One PGM grid per part of the last layer's analysis operator.

    Each tile is a row reshaped to its natural shape (sqrt(N) x sqrt(N) for
    dense parts, Q x Q for block-sparse), min-max rescaled per tile.
    """
    written = []
    for i, part in enumerate(params.layers[-1].analysis.parts()):
        bs = getattr(part, "block_spec", None)
        if bs is not None:
            q = bs["q"]
            tiles = part.weight_arrays()[0].reshape(part.out_dim, q, q)
        else:
            q = int(round(math.sqrt(part.in_dim)))
            if q * q != part.in_dim:
                continue
            tiles = part.to_dense().reshape(part.out_dim, q, q)
        count = tiles.shape[0]
        grid_cols = int(math.ceil(math.sqrt(count)))
        grid_rows = int(math.ceil(count / grid_cols))
        canvas = np.zeros((grid_rows * (q + 1) + 1, grid_cols * (q + 1) + 1))
        for t in range(count):
            tile = tiles[t]
            lo, hi = tile.min(), tile.max()
            scaled = np.zeros_like(tile) if hi == lo else (tile - lo) / (hi - lo) * 255.0
            r, c = divmod(t, grid_cols)
            canvas[r * (q + 1) + 1:r * (q + 1) + 1 + q,
                   c * (q + 1) + 1:c * (q + 1) + 1 + q] = scaled
        path = os.path.join(out_dir, f"{prefix}_part{i}.pgm")
        datamod.save_pgm(path, canvas)
        written.append(path)
    return written


def cmd_train(cfg: dict, config_path: str, verbose: bool) -> int:
    dataset = _load_dataset(cfg)
    train_set, val_set, _ = _split_dataset(cfg, dataset)
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("train and val splits must both be nonempty")
    a_op = degradation_from_spec(dataset.degradation)
    params = _build_network(cfg, a_op, cfg["seed"])
    tconf = _train_config(cfg, params.mode)
    out = _prepare_output(cfg, config_path)
    result = train(params, train_set.clean, train_set.degraded,
                   val_set.clean, val_set.degraded, tconf, side=dataset.side)
    netmod.serialize(result.final_params, os.path.join(out, "model_final.json"))
    netmod.serialize(result.best_params, os.path.join(out, "model_best.json"))
    result.history.to_csv(os.path.join(out, "history.csv"))
    export_filter_grids(result.final_params, out)
    if verbose:
        last = result.history.records[-1]
        print(f"trained {tconf.max_iter} iterations in {result.seconds:.1f}s; "
              f"final val PSNR {_fmt(last['val_psnr'])} dB "
              f"(best {_fmt(result.best_psnr)} at iteration {result.best_iter})")
    return 0


def cmd_eval(cfg: dict, config_path: str, model_path: str, betas: list[float],
             verbose: bool) -> int:
    params = netmod.deserialize(model_path)
    dataset = _load_dataset(cfg)
    if dataset.degradation != params.degradation.spec():
        raise ConfigError(
            f"model degradation {params.degradation.spec()} does not match "
            f"dataset degradation {dataset.degradation}"
        )
    subset = _eval_subset(cfg, dataset)
    out = _prepare_output(cfg, config_path)
    from .network import forward

    restored, _ = forward(params, subset.degraded)
    rows = []
    for i in range(len(subset)):
        rows.append((i, datamod.psnr(restored[i], subset.clean[i]),
                     datamod.ssim(restored[i], subset.clean[i], side=subset.side)))
    finite = [r[1] for r in rows if math.isfinite(r[1])]
    mean_psnr = float(np.mean([r[1] for r in rows])) if finite else float("inf")
    mean_ssim = float(np.mean([r[2] for r in rows]))
    with open(os.path.join(out, "metrics.csv"), "w", encoding="ascii") as f:
        f.write("image,psnr,ssim\n")
        for i, p, s in rows:
            f.write(f"{i},{'identical' if math.isinf(p) else repr(p)},{repr(s)}\n")
        f.write(f"mean,{'identical' if math.isinf(mean_psnr) else repr(mean_psnr)},"
                f"{repr(mean_ssim)}\n")
    if betas:
        table = datamod.robustness_eval(params, subset, betas, derive(cfg["seed"], 7))
        with open(os.path.join(out, "robustness.csv"), "w", encoding="ascii") as f:
            f.write("beta,psnr,ssim,psnr_drop_pct,ssim_drop_pct\n")
            for r in table:
                f.write(f"{repr(r['beta'])},{repr(r['psnr'])},{repr(r['ssim'])},"
                        f"{repr(r['psnr_drop_pct'])},{repr(r['ssim_drop_pct'])}\n")
    if verbose:
        print(f"evaluated {len(subset)} images: mean PSNR {_fmt(mean_psnr)} dB, "
              f"mean SSIM {mean_ssim:.4f}")
    return 0


def cmd_solve(cfg: dict, config_path: str, verbose: bool) -> int:
    s = cfg.get("solve")
    if s is None:
        raise ConfigError("config needs a 'solve' section")
    dataset = _load_dataset(cfg)
    subset = _eval_subset(cfg, dataset)
    a_op = degradation_from_spec(dataset.degradation)
    lam = float(s.get("lambda", 1.0))
    if lam <= 0:
        raise ConfigError("lambda must be positive")
    prior = s.get("prior", "first-diff")
    if prior == "identity":
        l_op = make_scaled_identity_analysis(a_op.in_dim, lam)
    else:
        l_op = make_first_difference(dataset.side, scale=lam)
    tau = float(s.get("tau", 1.0))
    norm_a = a_op.cached_norm
    if 1.0 / tau <= norm_a**2 / 2.0:
        raise ConfigError("tau too large: 1/tau must exceed ||A||^2 / 2")
    sigma = s.get("sigma")
    if sigma is None:
        sigma = 0.9 * (1.0 / tau - norm_a**2 / 2.0) / l_op.norm() ** 2
    steps = StepSizes(tau=tau, sigma=float(sigma))
    tol = float(s.get("tol", 1e-5))
    max_iter = int(s.get("max_iter", 10_000))
    out = _prepare_output(cfg, config_path)
    report_rows = []
    for i in range(len(subset)):
        rep = pdhg_solve(a_op, l_op, subset.degraded[i], steps,
                         tol=tol, max_iter=max_iter)
        datamod.save_pgm(os.path.join(out, f"restored_{i:04d}.pgm"),
                         rep.x_hat.reshape(subset.side, subset.side))
        report_rows.append((i, rep.iterations, rep.final_residual, rep.converged,
                            datamod.psnr(rep.x_hat, subset.clean[i])))
    with open(os.path.join(out, "solve_report.csv"), "w", encoding="ascii") as f:
        f.write("image,iterations,final_residual,converged,psnr\n")
        for i, its, res, conv, p in report_rows:
            f.write(f"{i},{its},{repr(res)},{int(conv)},"
                    f"{'identical' if math.isinf(p) else repr(p)}\n")
    n_bad = sum(1 for r in report_rows if not r[3])
    if verbose:
        print(f"solved {len(report_rows)} images "
              f"({n_bad} not converged within {max_iter} iterations)")
    return 0


def gradcheck_errors(params, clean, degraded, epsilon: float = 1e-6,
                     flip_output_sign: bool = False) -> dict:
    """Max relative gradient errors per parameter group.

    ``flip_output_sign`` negates the output-layer error before the backward
    pass (a deliberate-mutation hook used to prove the check can fail).
    """
    from .network import forward as net_forward

    out, trace = net_forward(params, degraded, keep_trace=True)
    target = (2.0 * out - clean) if flip_output_sign else clean
    analytic = backward(params, target, trace)
    reference = finite_diff_gradients(params, clean, degraded, epsilon=epsilon)
    return compare_gradients(analytic, reference)


def cmd_gradcheck(cfg: dict, config_path: str, verbose: bool,
                  flip_output_sign: bool = False) -> int:
    d = cfg.get("data") or {}
    side = int(d.get("image_side", 4))
    if side * side > 64:
        raise ConfigError("gradcheck needs a small instance (image_side^2 <= 64)")
    a_op, alpha = _build_degradation(cfg, side)
    params = _build_network(cfg, a_op, cfg["seed"])
    stream = Stream(derive(cfg["seed"], 8))
    clean = (stream.uniform(3 * side * side) * 255.0).reshape(3, side * side)
    degraded = np.stack([
        datamod.degrade(clean[i], a_op, alpha, derive(cfg["seed"], 9, i))
        for i in range(3)
    ])
    errors = gradcheck_errors(params, clean, degraded,
                              flip_output_sign=flip_output_sign)
    ok = all(v <= 1e-5 for v in errors.values())
    for group, err in errors.items():
        print(f"gradcheck {group:8s} max relative error {err:.3e} "
              f"{'ok' if err <= 1e-5 else 'FAIL'}")
    print(f"gradcheck: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 3


def cmd_export_filters(model_path: str, out_dir: str, verbose: bool) -> int:
    params = netmod.deserialize(model_path)
    os.makedirs(out_dir, exist_ok=True)
    written = export_filter_grids(params, out_dir)
    if verbose:
        for path in written:
            print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdnet",
                                description="unrolled primal-dual network driver")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, needs_config=True, needs_model=False):
        sp = sub.add_parser(name)
        if needs_config:
            sp.add_argument("--config", required=True)
            sp.add_argument("--seed", type=int, default=None)
            sp.add_argument("--output", default=None)
        if needs_model:
            sp.add_argument("--model", required=True)
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    add("degrade")
    add("train")
    ev = add("eval", needs_model=True)
    ev.add_argument("--beta", default=None,
                    help="comma-separated extra-noise levels, e.g. 2,5,10,20")
    add("solve")
    gc = add("gradcheck")
    gc.add_argument("--flip-output-sign", action="store_true",
                    help=argparse.SUPPRESS)
    ef = sub.add_parser("export-filters")
    ef.add_argument("--model", required=True)
    ef.add_argument("--output", required=True)
    ef.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "export-filters":
            return cmd_export_filters(args.model, args.output, args.verbose)
        cfg = load_config(args.config, seed_override=args.seed,
                          output_override=args.output)
        if args.command == "degrade":
            return cmd_degrade(cfg, args.config, args.verbose)
        if args.command == "train":
            return cmd_train(cfg, args.config, args.verbose)
        if args.command == "eval":
            betas = [float(b) for b in args.beta.split(",")] if args.beta else []
            return cmd_eval(cfg, args.config, args.model, betas, args.verbose)
        if args.command == "solve":
            return cmd_solve(cfg, args.config, args.verbose)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args.config, args.verbose,
                                 flip_output_sign=args.flip_output_sign)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ModelFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDivergedError, RuntimeError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
