"""Command-line entry point: ``warpkit <subcommand> ...``.

Exit codes: 0 success, 1 usage error (help text on stderr), 2 runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import gmm, io, personrep, shapectx, tom, tps
from .diffcore.tensor import no_tape
from .harness import experiments, gradsuite, metrics, synth

log = logging.getLogger("warpkit")

META_KEYS = ("height", "width", "filter_div")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- helpers


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _config(path) -> io.Config:
    return io.Config.load(path) if path else io.Config()


def _train_config(cfg: io.Config, default_lr: float) -> gmm.TrainConfig:
    return gmm.TrainConfig(
        steps=cfg.get_int("steps", 2000),
        batch=cfg.get_int("batch", 4),
        lr=cfg.get_float("lr", default_lr),
        seed=cfg.get_int("seed", 0),
    )


def _save_net(net, variant: str | None, path) -> None:
    tensors = dict(net.state_dict())
    for k in META_KEYS:
        tensors[f"meta.{k}"] = np.array(getattr(net.cfg, k), dtype=np.float32)
    if variant is not None:
        tensors["meta.variant"] = np.array(tom.VARIANTS.index(variant), dtype=np.float32)
    io.save_ckpt(tensors, path)


def _split_meta(path):
    state = io.load_ckpt(path)
    meta = {k[5:]: int(v.item()) for k, v in state.items() if k.startswith("meta.")}
    missing = [k for k in META_KEYS if k not in meta]
    if missing:
        raise io.CheckpointError(f"{path}: missing metadata {missing}")
    return {k: v for k, v in state.items() if not k.startswith("meta.")}, meta


def load_gmm(path) -> gmm.GmmNet:
    state, meta = _split_meta(path)
    net = gmm.GmmNet(gmm.GmmConfig(**{k: meta[k] for k in META_KEYS}))
    net.load_state_dict(state)
    return net


def load_tom(path) -> tom.TomNet:
    state, meta = _split_meta(path)
    variant = tom.VARIANTS[meta.get("variant", 0)]
    net = tom.TomNet(tom.TomConfig(variant=variant, **{k: meta[k] for k in META_KEYS}))
    net.load_state_dict(state)
    return net


def load_person(person_dir, name: str | None = None) -> personrep.PersonInputs:
    """Person files either flat in ``person_dir`` (image.png, keypoints.json,
    body_mask.png, reserved_mask.png) or, with ``name``, in dataset layout."""
    d = Path(person_dir)
    if name is None:
        paths = [d / "image.png", d / "keypoints.json", d / "body_mask.png", d / "reserved_mask.png"]
    else:
        paths = [d / "image" / f"{name}.png", d / "keypoints" / f"{name}.json", d / "body_mask" / f"{name}.png", d / "reserved_mask" / f"{name}.png"]
    return personrep.PersonInputs(
        io.load_image(paths[0], personrep.REF_SIZE),
        io.load_keypoints(paths[1]),
        io.load_mask(paths[2], personrep.REF_SIZE),
        io.load_mask(paths[3], personrep.REF_SIZE),
    )


def _points(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    pts = np.asarray(doc["points"] if isinstance(doc, dict) else doc, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"{path}: expected a list of [x, y] points, got shape {pts.shape}")
    return pts


# ---------------------------------------------------------------- commands


def cmd_solve_tps(a) -> int:
    coeffs = tps.solve_tps(_points(a.src), _points(a.dst), a.reg)
    io.save_ckpt(io.tps_to_tensors(coeffs), a.out)
    return 0


def cmd_warp(a) -> int:
    net = load_gmm(a.ckpt)
    size = (net.cfg.height, net.cfg.width)
    person = io.load_ckpt(a.person)["person"]
    if person.shape[1:] != size:
        person = personrep.resize_bilinear(person, size)
    cloth = io.load_image(a.cloth, size)
    with no_tape():
        theta, warped = gmm.gmm_forward(net, person, cloth)
    io.save_image(warped.data, a.out)
    if a.theta:
        io.save_ckpt({"theta": theta.data}, a.theta)
    return 0


def cmd_match_sc(a) -> int:
    src, dst = io.load_mask(a.src), io.load_mask(a.dst)
    coeffs = shapectx.match_and_fit(src, dst, a.points, a.reg)
    io.save_ckpt(io.tps_to_tensors(coeffs), a.out)
    if a.image:
        if not a.warped:
            raise UsageError("match-sc: --image needs --warped")
        io.save_image(shapectx.warp_image(io.load_image(a.image, src.shape), coeffs), a.warped)
    return 0


def cmd_build_rep(a) -> int:
    rep = personrep.assemble(load_person(a.person_dir, a.name), a.size)
    io.save_ckpt({"person": rep}, a.out)
    return 0


def cmd_train_gmm(a) -> int:
    cfg = _config(a.config)
    size = cfg.get_size("size", (64, 48))
    data = synth.load_dataset(a.data, size)
    net = gmm.GmmNet(gmm.GmmConfig(height=size[0], width=size[1], filter_div=cfg.get_int("filter_div", 4), seed=cfg.get_int("seed", 0)))
    curve = gmm.train_gmm(net, data.person_rep, data.cloth, data.worn, _train_config(cfg, gmm.DESK_LR))
    _save_net(net, None, a.out)
    io.write_loss_csv(Path(a.out).with_suffix(".loss.csv"), curve)
    print(f"gmm loss {curve[0]:.6f} -> {curve[-1]:.6f} over {len(curve)} steps")
    return 0


def cmd_train_tom(a) -> int:
    cfg = _config(a.config)
    size = cfg.get_size("size", (64, 48))
    data = synth.load_dataset(a.data, size)
    variant = a.variant or cfg.get("variant", "full")
    net = tom.TomNet(tom.TomConfig(height=size[0], width=size[1], filter_div=cfg.get_int("filter_div", 4), variant=variant, seed=cfg.get_int("seed", 0)))
    hist = tom.train_tom(
        net, data.person_rep, data.worn, data.target, _train_config(cfg, tom.DESK_LR),
        garment_mask=data.worn_mask, perturb_radius=cfg.get_int("perturb_radius", 0),
    )
    _save_net(net, variant, a.out)
    io.write_loss_csv(Path(a.out).with_suffix(".loss.csv"), hist.loss)
    print(f"tom[{variant}] loss {hist.loss[0]:.6f} -> {hist.loss[-1]:.6f} over {len(hist.loss)} steps")
    return 0


def cmd_tryon(a) -> int:
    g, t = load_gmm(a.gmm), load_tom(a.tom)
    size = (g.cfg.height, g.cfg.width)
    if size != (t.cfg.height, t.cfg.width):
        raise ValueError(f"GMM works at {size}, TOM at {(t.cfg.height, t.cfg.width)}")
    person = personrep.assemble(load_person(a.person_dir, a.name), size)
    cloth = io.load_image(a.cloth, size)
    with no_tape():
        _, warped = gmm.gmm_forward(g, person, cloth)
        _, mask, out = tom.tom_forward(t, person, warped.data)
    io.save_image(out.data, a.out)
    if a.dump_mask:
        if mask is None:
            log.warning("variant %s has no composition mask; %s not written", t.cfg.variant, a.dump_mask)
        else:
            io.save_image(mask.data[0], a.dump_mask)
    return 0


def cmd_perturb_eval(a) -> int:
    cfg = io.Config.load(a.config)
    base = Path(a.config).parent
    size = cfg.get_size("size", (64, 48))
    data_dir = cfg.get("data")
    if data_dir is None:
        raise ValueError(f"{a.config}: 'data' is required")
    data = synth.load_dataset(base / data_dir, size)
    variants = cfg.get_list("variants", ["full", "no_mask"])
    nets = {}
    for v in variants:
        ckpt = cfg.get(f"tom.{v}")
        if ckpt is None:
            raise KeyError(f"{a.config}: no checkpoint configured for variant {v!r} (key tom.{v})")
        nets[v] = load_tom(base / ckpt)
    rc = experiments.RobustnessConfig(radii=tuple(cfg.get_list("radii", list(experiments.RADII), int)), seed=cfg.get_int("seed", 0))
    report = experiments.robustness_experiment(nets, data, rc, variants)
    report.save_csv(a.out)
    for v in variants:
        print(f"{v}: L1 degradation N={rc.radii[0]}->{rc.radii[-1]} = {experiments.degradation(report, v, lo=rc.radii[0], hi=rc.radii[-1]):.6f}")
    return 0


def cmd_split_tv(a) -> int:
    d = Path(a.dir)
    files = sorted((d / "cloth").glob("*.png")) if (d / "cloth").is_dir() else sorted(d.glob("*.png"))
    tvs = {f.stem: metrics.tv_norm(io.load_image(f)) for f in files}
    large, small = metrics.split_tv(list(tvs.items()), a.k)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    with open(a.out, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"k": a.k, "large": large, "small": small, "tv": tvs}, fh, indent=1)
        fh.write("\n")
    return 0


def cmd_gen_synth(a) -> int:
    synth.save_dataset(synth.gen_synth_dataset(a.n, a.seed, a.size), a.out)
    return 0


def cmd_grad_check(a) -> int:
    worst, results, secs = gradsuite.report(a.seed)
    if a.verbose:
        for name, err in results.items():
            print(f"  {name:28s} {err:.3e}")
    print(f"max relative error: {worst:.3e} ({len(results)} cases, {secs:.1f} s)")
    return 0 if worst < gradsuite.TOLERANCE else 2


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="warpkit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("solve-tps", help="fit a TPS to point correspondences (JSON lists of [x, y])")
    s.add_argument("--src", required=True)
    s.add_argument("--dst", required=True)
    s.add_argument("--reg", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_solve_tps)

    s = sub.add_parser("warp", help="warp a garment with a trained matching checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--person", required=True, help="person representation from build-rep")
    s.add_argument("--cloth", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--theta", help="also write the predicted anchor offsets")
    s.set_defaults(fn=cmd_warp)

    s = sub.add_parser("match-sc", help="shape-context match of two masks, TPS fit")
    s.add_argument("--src", required=True)
    s.add_argument("--dst", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--points", type=int, default=shapectx.DEFAULT_POINTS)
    s.add_argument("--reg", type=float, default=shapectx.DEFAULT_REG)
    s.add_argument("--image", help="garment image to warp with the fitted map")
    s.add_argument("--warped")
    s.set_defaults(fn=cmd_match_sc)

    s = sub.add_parser("build-rep", help="assemble the 22-channel person representation")
    s.add_argument("--person-dir", required=True)
    s.add_argument("--name")
    s.add_argument("--size", type=_size, default=personrep.REF_SIZE)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_build_rep)

    s = sub.add_parser("train-gmm", help="train the matching module")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train_gmm)

    s = sub.add_parser("train-tom", help="train the try-on module")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--variant", choices=tom.VARIANTS)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train_tom)

    s = sub.add_parser("tryon", help="warp, render and composite one person/garment pair")
    s.add_argument("--gmm", required=True)
    s.add_argument("--tom", required=True)
    s.add_argument("--person-dir", required=True)
    s.add_argument("--name")
    s.add_argument("--cloth", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dump-mask")
    s.set_defaults(fn=cmd_tryon)

    s = sub.add_parser("perturb-eval", help="misalignment robustness report")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_perturb_eval)

    s = sub.add_parser("split-tv", help="LARGE/SMALL split of garments by TV norm")
    s.add_argument("--dir", required=True)
    s.add_argument("--k", type=int, default=50)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_split_tv)

    s = sub.add_parser("gen-synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=_size, default=(64, 48))
    s.set_defaults(fn=cmd_gen_synth)

    s = sub.add_parser("grad-check", help="finite-difference audit of all gradients")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_grad_check)
    return p


def _thread_limit():
    raw = os.environ.get("WARPKIT_THREADS")
    if not raw:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(max(1, int(raw)))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("warpkit: error: a subcommand is required", file=sys.stderr)
            return 1
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.fn(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        log.debug("traceback", exc_info=True)
        print(f"warpkit {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
