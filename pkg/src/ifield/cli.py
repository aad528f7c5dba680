"""Command-line pipeline: synth, fit-codebook, encode, train, restore, eval."""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import metrics as metrics_mod
from . import quantize, restore, synth, training
from .coords import sample_points
from .quantize import IntensityCodebook
from .restore import InferConfig
from .training import TrainConfig
from .volume import PreprocessSpec, Role, Volume, clip_normalize, read_volume, write_volume


class CliError(ValueError):
    pass


def log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- config files

def load_config(path) -> dict:
    """Flat `key = value` text config; values parsed as int/float/str."""
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CliError(f"{path}: malformed config line {line!r}")
            out[key.strip().replace("-", "_")] = _parse_value(value.strip())
    return out


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def resolve_options(args, defaults: dict) -> dict:
    """defaults < config file < explicit CLI flags."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        for key, value in cfg.items():
            if key in resolved:
                resolved[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def echo_config(out_dir, command: str, resolved: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{command}_config.txt")
    with open(path, "w") as fh:
        for key in sorted(resolved):
            fh.write(f"{key} = {resolved[key]}\n")


# ------------------------------------------------------------------- manifests

def write_manifest(path, entries) -> None:
    with open(path, "w") as fh:
        fh.write("# id split kind volume mask\n")
        for e in entries:
            fh.write(f"{e['id']} {e['split']} {e['kind']} {e['volume']} {e.get('mask') or '-'}\n")


def read_manifest(path) -> list[dict]:
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise CliError(f"{path}: malformed manifest line {line!r}")
            vid, split, kind, vol, mask = parts
            entries.append({
                "id": vid, "split": split, "kind": kind,
                "volume": os.path.join(base, vol),
                "mask": None if mask == "-" else os.path.join(base, mask),
            })
    return entries


# -------------------------------------------------------------------- commands

SYNTH_DEFAULTS = dict(dims=32, n_healthy=8, n_anomalous=4, val_healthy=0,
                      val_anomalous=0, blob_rmin=3.0, blob_rmax=5.5, seed=0)


def cmd_synth(args) -> int:
    opts = resolve_options(args, SYNTH_DEFAULTS)
    out = args.out
    echo_config(out, "synth", opts)
    d = int(opts["dims"])
    spec = synth.SynthSpec(
        dims=(d, d, d), n_healthy=int(opts["n_healthy"]),
        n_anomalous=int(opts["n_anomalous"]),
        blob_radius=(float(opts["blob_rmin"]), float(opts["blob_rmax"])),
        seed=int(opts["seed"]))
    n_train = spec.n_healthy - int(opts["val_healthy"])
    if n_train < 1:
        raise CliError("val_healthy leaves no training volumes")
    entries = []
    for i in range(spec.n_healthy):
        vol = synth.generate_healthy(spec, i)
        vid = f"healthy_{i:03d}"
        split = "train" if i < n_train else "val"
        write_volume(vol, os.path.join(out, f"{vid}.vol"))
        mask_name = None
        if split != "train":
            mask = Volume(vol.dims, Role.MASK, np.zeros(vol.size, dtype=np.uint8))
            mask_name = f"{vid}_mask.vol"
            write_volume(mask, os.path.join(out, mask_name))
        entries.append(dict(id=vid, split=split, kind="healthy",
                            volume=f"{vid}.vol", mask=mask_name))
        log(f"wrote {vid} ({split})")
    for i in range(spec.n_anomalous):
        vol, mask = synth.generate_anomalous(spec, i)
        vid = f"anomalous_{i:03d}"
        split = "val" if i < int(opts["val_anomalous"]) else "test"
        write_volume(vol, os.path.join(out, f"{vid}.vol"))
        write_volume(mask, os.path.join(out, f"{vid}_mask.vol"))
        entries.append(dict(id=vid, split=split, kind="anomalous",
                            volume=f"{vid}.vol", mask=f"{vid}_mask.vol"))
        log(f"wrote {vid} ({split})")
    manifest = os.path.join(out, "manifest.txt")
    write_manifest(manifest, entries)
    print(manifest)
    return 0


CODEBOOK_DEFAULTS = dict(k=10, clip_percentile=98.0, max_iters=100,
                         sample_limit=quantize.DEFAULT_SAMPLE_LIMIT, seed=0)


def cmd_fit_codebook(args) -> int:
    opts = resolve_options(args, CODEBOOK_DEFAULTS)
    echo_config(args.out, "fit_codebook", opts)
    entries = [e for e in read_manifest(args.manifest) if e["split"] == "train"]
    if not entries:
        raise CliError("manifest has no training volumes")
    spec = PreprocessSpec(clip_percentile=float(opts["clip_percentile"]))
    samples = [clip_normalize(read_volume(e["volume"]), spec).data for e in entries]
    codebook = quantize.fit_codebook(
        np.concatenate(samples), int(opts["k"]), seed=int(opts["seed"]),
        max_iters=int(opts["max_iters"]), sample_limit=int(opts["sample_limit"]))
    path = os.path.join(args.out, "codebook.txt")
    codebook.save(path)
    log(f"fitted k={codebook.k} codebook on {codebook.n_samples} samples")
    print(path)
    return 0


ENCODE_DEFAULTS = dict(clip_percentile=98.0, pool_train=2, pool_eval=3)


def cmd_encode(args) -> int:
    opts = resolve_options(args, ENCODE_DEFAULTS)
    echo_config(args.out, "encode", opts)
    codebook = IntensityCodebook.load(args.codebook)
    spec = PreprocessSpec(clip_percentile=float(opts["clip_percentile"]))
    entries = read_manifest(args.manifest)
    out_entries = []
    for e in entries:
        window = int(opts["pool_train"] if e["split"] == "train" else opts["pool_eval"])
        vol = read_volume(e["volume"])
        labels = quantize.mode_pool(quantize.encode(clip_normalize(vol, spec), codebook),
                                    window)
        name = f"{e['id']}_labels.vol"
        write_volume(labels, os.path.join(args.out, name))
        mask_name = None
        if e["mask"]:
            mask = quantize.mode_pool(read_volume(e["mask"]), window)
            mask_name = f"{e['id']}_mask.vol"
            write_volume(mask, os.path.join(args.out, mask_name))
        out_entries.append(dict(id=e["id"], split=e["split"], kind=e["kind"],
                                volume=name, mask=mask_name))
        log(f"encoded {e['id']} -> {labels.dims} (pool {window})")
    manifest = os.path.join(args.out, "manifest.txt")
    write_manifest(manifest, out_entries)
    print(manifest)
    return 0


TRAIN_DEFAULTS = dict(epochs=2000, points=16200, batch_volumes=6, sigma=0.01,
                      lr_net=5e-4, lr_latent=1e-3, latent_dim=256, levels=10,
                      hidden=512, depth=8, dropout=0.2, checkpoint_interval=0,
                      seed=0)


def cmd_train(args) -> int:
    opts = resolve_options(args, TRAIN_DEFAULTS)
    echo_config(args.out, "train", opts)
    codebook = IntensityCodebook.load(args.codebook)
    entries = [e for e in read_manifest(args.manifest) if e["split"] == "train"]
    if not entries:
        raise CliError("manifest has no training volumes")
    volumes = [read_volume(e["volume"]) for e in entries]
    config = TrainConfig(
        epochs=int(opts["epochs"]), points_per_volume=int(opts["points"]),
        volumes_per_batch=int(opts["batch_volumes"]), sigma=float(opts["sigma"]),
        lr_net=float(opts["lr_net"]), lr_latent=float(opts["lr_latent"]),
        seed=int(opts["seed"]), latent_dim=int(opts["latent_dim"]),
        levels=int(opts["levels"]), classes=codebook.k, hidden=int(opts["hidden"]),
        depth=int(opts["depth"]), dropout=float(opts["dropout"]),
        checkpoint_interval=int(opts["checkpoint_interval"]))
    _, _, history = training.train(volumes, config, checkpoint_dir=args.out, log=log)
    with open(os.path.join(args.out, "loss_history.txt"), "w") as fh:
        fh.writelines(f"{loss:.12g}\n" for loss in history)
    path = os.path.join(args.out, "checkpoint_final.ifck")
    print(path)
    return 0


RESTORE_DEFAULTS = dict(steps=700, points=16200, lr=1e-2, sigma=0.01,
                        min_size=3, avg_size=15, held_points=4096, seed=0)


def cmd_restore(args) -> int:
    opts = resolve_options(args, RESTORE_DEFAULTS)
    echo_config(args.out, "restore", opts)
    model, _, header = training.load_checkpoint(args.checkpoint)
    if args.codebook:
        codebook = IntensityCodebook.load(args.codebook)
        if codebook.k != header["classes"]:
            raise CliError(
                f"codebook k={codebook.k} != checkpoint classes {header['classes']}")
    latent_dim, levels = header["latent_dim"], header["levels"]
    entries = [e for e in read_manifest(args.manifest) if e["split"] != "train"]
    if not entries:
        raise CliError("manifest has no val/test volumes to restore")
    for idx, e in enumerate(entries):
        volume = read_volume(e["volume"])
        config = InferConfig(steps=int(opts["steps"]), points=int(opts["points"]),
                             lr=float(opts["lr"]), sigma=float(opts["sigma"]),
                             seed=int(opts["seed"]) * 1000003 + idx)
        held_rng = np.random.default_rng(np.random.SeedSequence([int(opts["seed"]), 53, idx]))
        held = sample_points(volume, int(opts["held_points"]), levels, held_rng)
        result = restore.retrieve_latent(model, volume, config, latent_dim, levels)
        obj_init = restore.objective_on_points(model, result.z_init, held, config.sigma)
        obj_final = restore.objective_on_points(model, result.z, held, config.sigma)
        scores = restore.anomaly_score(model, result.z, volume, levels)
        post = restore.postprocess_scores(scores, int(opts["min_size"]), int(opts["avg_size"]))
        restored = restore.restore_volume(model, result.z, volume.dims, levels)
        write_volume(post, os.path.join(args.out, f"{e['id']}_as.vol"))
        write_volume(scores, os.path.join(args.out, f"{e['id']}_as_raw.vol"))
        write_volume(restored, os.path.join(args.out, f"{e['id']}_restored.vol"))
        with open(os.path.join(args.out, f"{e['id']}_summary.txt"), "w") as fh:
            fh.write(f"steps = {config.steps}\n"
                     f"final_objective = {result.final_objective:.12g}\n"
                     f"latent_norm = {float(np.linalg.norm(result.z)):.12g}\n"
                     f"held_objective_init = {obj_init:.12g}\n"
                     f"held_objective_final = {obj_final:.12g}\n")
        log(f"restored {e['id']}: held objective {obj_init:.4f} -> {obj_final:.4f}")
    print(args.out)
    return 0


EVAL_DEFAULTS = dict(threshold_from="val")


def cmd_eval(args) -> int:
    opts = resolve_options(args, EVAL_DEFAULTS)
    echo_config(args.out, "eval", opts)
    entries = read_manifest(args.manifest)
    scores_dir = args.scores

    def load_pairs(split):
        pairs = []
        for e in entries:
            if e["split"] != split:
                continue
            if not e["mask"]:
                raise CliError(f"{e['id']} has no ground-truth mask")
            as_path = os.path.join(scores_dir, f"{e['id']}_as.vol")
            score = read_volume(as_path)
            mask = read_volume(e["mask"])
            if score.dims != mask.dims:
                raise CliError(f"{e['id']}: score dims {score.dims} != mask dims {mask.dims}")
            pairs.append((e["id"], score, mask))
        return pairs

    test_pairs = load_pairs("test")
    if not test_pairs:
        raise CliError("empty test split")
    val_pairs = load_pairs(str(opts["threshold_from"]))
    if val_pairs and any(p[2].data.any() for p in val_pairs):
        threshold = metrics_mod.best_dice([p[1].data for p in val_pairs],
                                          [p[2].data for p in val_pairs])[1]
        log(f"threshold from {opts['threshold_from']} DICE sweep: {threshold:.6g}")
    elif val_pairs:
        # healthy-only validation: smallest threshold with no false positives
        threshold = float(np.nextafter(max(float(p[1].data.max()) for p in val_pairs),
                                       np.inf))
        log(f"healthy-only validation; threshold above max val score: {threshold:.6g}")
    else:
        raise CliError(f"no volumes in threshold split {opts['threshold_from']!r}")
    report = metrics_mod.evaluate([p[1].data for p in test_pairs],
                                  [p[2].data for p in test_pairs], threshold)
    path = os.path.join(args.out, "metrics.txt")
    with open(path, "w") as fh:
        fh.write(report.format())
    print(path)
    print(report.format(), end="")
    return 0


# ------------------------------------------------------------------ entrypoint

def _add_common(parser):
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker count (current implementation is single-process)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ifield")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset and manifest")
    _add_common(p)
    for flag in ("dims", "n-healthy", "n-anomalous", "val-healthy", "val-anomalous"):
        p.add_argument(f"--{flag}", type=int)
    p.add_argument("--blob-rmin", type=float)
    p.add_argument("--blob-rmax", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit-codebook", help="fit the k-means intensity codebook")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--clip-percentile", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--sample-limit", type=int)
    p.set_defaults(func=cmd_fit_codebook)

    p = sub.add_parser("encode", help="clip/normalize, encode, and mode-pool volumes")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--clip-percentile", type=float)
    p.add_argument("--pool-train", type=int)
    p.add_argument("--pool-eval", type=int)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train the auto-decoder on encoded volumes")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--codebook", required=True)
    for flag in ("epochs", "points", "batch-volumes", "latent-dim", "levels",
                 "hidden", "depth", "checkpoint-interval"):
        p.add_argument(f"--{flag}", type=int)
    for flag in ("sigma", "lr-net", "lr-latent", "dropout"):
        p.add_argument(f"--{flag}", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("restore", help="latent retrieval, anomaly scores, post-processing")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codebook")
    for flag in ("steps", "points", "min-size", "avg-size", "held-points"):
        p.add_argument(f"--{flag}", type=int)
    for flag in ("lr", "sigma"):
        p.add_argument(f"--{flag}", type=float)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="threshold from validation, metrics over test")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scores", required=True, help="directory with <id>_as.vol files")
    p.add_argument("--threshold-from")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        log("error: --workers must be >= 1")
        return 2
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
