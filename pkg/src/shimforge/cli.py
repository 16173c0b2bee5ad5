"""``shimforge`` command-line entry point.

Every command writes into ``--out`` (write-once) and leaves a
``manifest.json`` listing its configuration, derived seeds and output
checksums. Exit codes: 0 success, 1 benchmark finished with failed cells,
2 configuration error, 3 numeric error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from shimforge import __version__
from shimforge.errors import ArtifactIOError, ConfigError, ShimforgeError
from shimforge.io import RunManifest, claim, load_images, load_png, save_png
from shimforge.seeds import derive_seed, seed_list, seed_manifest

log = logging.getLogger("shimforge")

SCHEMES = ("blocksvd", "spread", "treering-generate")


def _model(args, dtype=torch.float32):
    from shimforge.diffusion import DiffusionModel, load_weights

    if not args.weights:
        raise ConfigError(f"'{args.command}' needs trained weights: run 'shimforge train' and pass --weights PATH")
    path = Path(args.weights)
    if not path.is_file():
        raise ArtifactIOError(f"weights file not found: {path} (train one with 'shimforge train')")
    denoiser, _ = load_weights(path)
    return DiffusionModel(denoiser, dtype=dtype)


def _manifest(args, config: dict, inputs=()) -> RunManifest:
    return RunManifest(args.command, config, args.seed, seed_manifest(args.seed), [str(p) for p in inputs])


def _out(args) -> Path:
    if not args.out:
        raise ConfigError(f"'{args.command}' needs --out DIR")
    return Path(args.out)


def _finish(args, manifest: RunManifest, out: Path) -> None:
    manifest.write(out / "manifest.json")
    print(f"wrote {len(manifest.outputs)} files to {out}")


def cmd_gen_data(args) -> int:
    from shimforge.diffusion import procedural_dataset

    out = _out(args)
    seed = derive_seed(args.seed, "dataset") if args.data_seed is None else args.data_seed
    m = _manifest(args, {"n": args.n, "data_seed": seed, "size": 32})
    images = procedural_dataset(args.n, seed) if args.n else np.empty((0, 32, 32, 3))
    for i, img in enumerate(images):
        m.add_output(save_png(out / "images" / f"{i:05d}.png", img))
    _finish(args, m, out)
    return 0


def cmd_train(args) -> int:
    from shimforge.diffusion import TrainConfig, load_weights, save_weights, train_denoiser

    out = _out(args)
    images, paths = load_images(args.data)
    init, start = None, 0
    if args.resume:
        if not args.weights:
            raise ConfigError("--resume needs --weights pointing at the checkpoint to continue")
        init, meta = load_weights(args.weights)
        start = int(meta.get("step", 0))
    seed = derive_seed(args.seed, "train")
    cfg = TrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr)
    weights_path = claim(out / "weights.bin")
    log_path = claim(out / "train_log.csv")
    m = _manifest(
        args,
        {"steps": args.steps, "batch_size": args.batch_size, "lr": args.lr, "train_seed": seed,
         "resume_from": args.weights if args.resume else None, "start_step": start, "n_images": len(images)},
        [args.data] + ([args.weights] if args.resume else []),
    )
    torch.set_num_threads(max(1, args.jobs))
    result = train_denoiser(images, seed=seed, config=cfg, init=init, start_step=start)
    save_weights(weights_path, result.denoiser, {"step": result.step, "seed": seed})
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step", "loss"))
        for step, loss in result.log_rows(100):
            w.writerow((step, repr(loss)))
    m.add_output(weights_path)
    m.add_output(log_path)
    print(f"trained to step {result.step}; last-100 loss {result.running_loss('last'):.5f}")
    _finish(args, m, out)
    return 0


def _bit_key(args, scheme: str):
    from shimforge.watermark import BitKey, load_key

    if args.key:
        key = load_key(args.key)
        if getattr(key, "scheme", None) != scheme:
            raise ConfigError(f"key {args.key} is not a {scheme} key")
        return key
    seed = args.new_key if args.new_key is not None else derive_seed(args.seed, f"key-{scheme}")
    return BitKey.random(seed, scheme)


def cmd_watermark(args) -> int:
    from shimforge.watermark import EMBEDDERS, TreeRingKey, load_key, save_key, treering_generate

    out = _out(args)
    if args.scheme == "treering-generate":
        model = _model(args)
        if args.key:
            key = load_key(args.key)
            if not isinstance(key, TreeRingKey):
                raise ConfigError(f"key {args.key} is not a tree-ring key")
        else:
            seed = args.new_key if args.new_key is not None else derive_seed(args.seed, "key-treering")
            key = TreeRingKey.random(seed, channel=args.channel)
        seeds = seed_list(derive_seed(args.seed, "treering-noise"), args.count)
        m = _manifest(args, {"scheme": args.scheme, "key": key.to_dict(), "noise_seeds": seeds}, [args.weights])
        images, _ = treering_generate(key, model, seeds)
        names = [f"{i:05d}.png" for i in range(len(images))]
    else:
        if not args.input:
            raise ConfigError("--in is required for post-hoc schemes")
        key = _bit_key(args, args.scheme)
        clean, paths = load_images(args.input)
        m = _manifest(args, {"scheme": args.scheme, "key": key.to_dict()}, paths)
        images = np.stack([EMBEDDERS[args.scheme](x, key) for x in clean])
        names = [p.name for p in paths]
    for name, img in zip(names, images):
        m.add_output(save_png(out / "images" / name, img))
    key_path = claim(out / "key.json")
    save_key(key_path, key)
    m.add_output(key_path)
    _finish(args, m, out)
    return 0


def cmd_detect(args) -> int:
    from shimforge.metrics import acc_rule
    from shimforge.watermark import DETECTORS, TreeRingKey, load_key, treering_detect

    key = load_key(args.key)
    images, paths = load_images(args.input)
    if isinstance(key, TreeRingKey):
        dets = treering_detect(images, key, _model(args))
        for p, d in zip(paths, dets):
            print(f"{p.name}\tscore {d.score:.4f}")
        print(f"mean score {np.mean([d.score for d in dets]):.4f} over {len(dets)} images")
        return 0
    dets = [DETECTORS[key.scheme](x, key) for x in images]
    for p, d in zip(paths, dets):
        print(f"{p.name}\tBA {d.score:.2f}\t{'detected' if acc_rule(d.score, len(key.bits)) else 'not detected'}")
    print(f"mean BA {np.mean([d.score for d in dets]):.2f} over {len(dets)} images")
    return 0


def _attack_config(args):
    from shimforge.attack import load_config, preset

    if args.config and args.preset:
        raise ConfigError("pass either --config or --preset, not both")
    cfg = load_config(args.config) if args.config else preset(args.preset or "late-noisy")
    changes = {"seed": derive_seed(args.seed, "attack")}
    if args.max_iters is not None:
        changes["max_iters"] = args.max_iters
    return cfg.with_(**changes)


def cmd_attack(args) -> int:
    from shimforge.attack import regen, rinse, run_attack

    out = _out(args)
    model = _model(args)
    images, paths = load_images(args.input)
    cfg = _attack_config(args)
    t_star = args.t_star if args.t_star is not None else cfg.K
    conf = {"mode": args.mode, "attack": cfg.to_dict()}
    if args.mode != "shim":
        conf.update({"t_star": t_star, "rounds": args.rounds})
    m = _manifest(args, conf, [*paths, args.weights])
    trace_path = None
    if args.mode == "regen":
        attacked = regen(model, images, t_star, cfg.seed)
    elif args.mode == "rinse":
        attacked = rinse(model, images, t_star, args.rounds, cfg.seed)
    else:
        dumps = _dumper(model, out, paths, args.dump_iters, m) if args.dump_iters else None
        result = run_attack(model, images, cfg, dump_iters=dumps)
        attacked = result.images
        trace_path = claim(out / "trace.csv")
        result.write_trace_csv(trace_path)
        for t, norms in sorted(result.delta_norms.items(), reverse=True):
            hit = np.mean(norms >= cfg.margin(t) - 1e-9)
            print(f"t={t}: mean |delta| {norms.mean():.3f}, hinge satisfied on {hit:.0%}")
    for p, img in zip(paths, attacked):
        m.add_output(save_png(out / "images" / p.name, img))
    if trace_path is not None:
        m.add_output(trace_path)
    _finish(args, m, out)
    return 0


def _dumper(model, out: Path, paths, spec: str, manifest: RunManifest):
    """Hook that saves a completed preview image for the requested iterations.

    The preview runs plain sampler steps from the iterate down to 0, so it
    shows what the attack would output had it stopped there.
    """
    from shimforge.diffusion import decode

    wanted = {int(s) for s in spec.split(",") if s.strip()}

    def hook(t, it, x_prev):
        if it not in wanted:
            return
        prev = model.grid.prev(t)
        x = model.generate(x_prev.detach(), start=prev) if prev else x_prev.detach()
        for p, img in zip(paths, decode(x)):
            manifest.add_output(save_png(out / "dumps" / f"t{t:04d}_it{it:03d}" / p.name, img))

    return hook


def cmd_eval(args) -> int:
    from shimforge.metrics import BenchmarkConfig, run_benchmark
    from shimforge.metrics.detection import roc_curve
    from shimforge.plotting import plot_bit_accuracy, plot_roc

    out = _out(args)
    conf = {}
    if args.config:
        try:
            conf = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read benchmark config {args.config}: {exc}") from exc
    conf["seed"] = args.seed
    for k in ("n_images", "null_size", "max_iters"):
        if getattr(args, k) is not None:
            conf[k] = getattr(args, k)
    try:
        bconf = BenchmarkConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in conf.items()})
    except TypeError as exc:
        raise ConfigError(f"bad benchmark config: {exc}") from exc
    for name in ("report.json", "report.txt"):
        claim(out / name)
    torch.set_num_threads(max(1, args.jobs))
    model = _model(args)
    m = _manifest(args, bconf.to_dict(), [args.weights])
    report = run_benchmark(model, bconf)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_text())
    m.add_output(out / "report.json")
    m.add_output(out / "report.txt")
    for name, scores in sorted(report.rocs.items()):
        path = claim(out / "roc" / (name.replace("/", "_") + ".csv"))
        roc_curve(scores["null"], scores["positive"], bconf.fpr).write_csv(path)
        m.add_output(path)
    fig_dir = out / "figures"
    for scheme in bconf.schemes:
        m.add_output(plot_roc(report, scheme, claim(fig_dir / f"roc_{scheme}.png"), bconf.fpr))
    m.add_output(plot_bit_accuracy(report, claim(fig_dir / "bit_accuracy.png")))
    timing_path = claim(out / "timings.json")
    timing_path.write_text(json.dumps(report.timings, indent=2, sort_keys=True) + "\n")
    print(report.to_text())
    _finish(args, m, out)
    if not report.ok:
        print("some benchmark cells failed; see report.txt", file=sys.stderr)
        return 1
    return 0


def cmd_diffgrid(args) -> int:
    from shimforge.plotting import diff_grid

    out = _out(args)
    target = load_png(args.target)
    dump_root = Path(args.dumps)
    dirs = sorted(d for d in dump_root.iterdir() if d.is_dir()) if dump_root.is_dir() else []
    name = Path(args.target).name if args.name is None else args.name
    iterates = [(d.name.replace("_", " "), load_png(d / name)) for d in dirs if (d / name).is_file()]
    if not iterates:
        raise ArtifactIOError(f"no iterate dumps named {name} under {dump_root}")
    final = load_png(args.final) if args.final else iterates[-1][1]
    path = diff_grid(target, iterates, final, claim(out / f"diffgrid_{Path(name).stem}.png"))
    m = _manifest(args, {"target": args.target, "dumps": args.dumps, "final": args.final}, [args.target])
    m.add_output(path)
    _finish(args, m, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shimforge", description="Watermark forgery lab: train, watermark, attack, evaluate.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--weights", help="trained weights file")
    common.add_argument("--jobs", type=int, default=1, help="torch threads")
    common.add_argument("--out", help="output directory (files are never overwritten)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="write procedural training images")
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--data-seed", type=int, help="dataset seed (default: derived from --seed)")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train the denoiser on a PNG directory")
    s.add_argument("--data", required=True)
    s.add_argument("--steps", type=int, default=6000)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--lr", type=float, default=2e-3)
    s.add_argument("--resume", action="store_true", help="continue from --weights")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("watermark", parents=[common], help="embed a watermark or generate tree-ring images")
    s.add_argument("--scheme", choices=SCHEMES, required=True)
    s.add_argument("--in", dest="input")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--key", help="existing key JSON")
    g.add_argument("--new-key", type=int, metavar="SEED", help="create a key from this seed")
    s.add_argument("--count", type=int, default=16, help="images to generate (treering-generate)")
    s.add_argument("--channel", type=int, default=0, help="latent channel for a new tree-ring key")
    s.set_defaults(func=cmd_watermark)

    s = sub.add_parser("detect", parents=[common], help="score images against a key")
    s.add_argument("--key", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("attack", parents=[common], help="attack watermarked images")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--preset", choices=("late-noisy", "early-inverse"))
    s.add_argument("--config", help="attack config JSON")
    s.add_argument("--mode", choices=("shim", "regen", "rinse"), default="shim")
    s.add_argument("--rounds", type=int, default=2)
    s.add_argument("--t-star", type=int, help="regen/rinse timestep (default: the config's K)")
    s.add_argument("--max-iters", type=int)
    s.add_argument("--dump-iters", help="comma-separated shim iterations to save previews for")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("eval", parents=[common], help="run the full benchmark")
    s.add_argument("--config", help="benchmark config JSON")
    s.add_argument("--n-images", type=int)
    s.add_argument("--null-size", type=int)
    s.add_argument("--max-iters", type=int)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("diffgrid", parents=[common], help="render |target - iterate| panels")
    s.add_argument("--target", required=True)
    s.add_argument("--dumps", required=True, help="the 'dumps' directory written by attack --dump-iters")
    s.add_argument("--final", help="attacked image (default: the last dump)")
    s.add_argument("--name", help="image file name inside each dump directory")
    s.set_defaults(func=cmd_diffgrid)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ShimforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ArtifactIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
