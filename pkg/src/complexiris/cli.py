"""Command-line entry point.

    complexiris synth --ids 20 --samples 10 --seed 7 --out data/
    complexiris train --manifest data/manifest.csv --out run/ --deterministic --seed 7
    complexiris encode --checkpoint run/model.cirn --manifest data/manifest.csv --out feats/
    complexiris eval --features feats/ --manifest data/manifest.csv --out report/

Every command also accepts ``--config FILE`` with key=value lines whose keys
are the long option names (dashes or underscores); explicit flags win.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("complexiris")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def read_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _convert(action, text):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        low = text.lower()
        if low not in ("1", "0", "true", "false", "yes", "no"):
            raise UsageError(f"{action.dest}: expected a boolean, got {text!r}")
        return low in ("1", "true", "yes")
    try:
        return action.type(text) if action.type else text
    except (TypeError, ValueError) as e:
        raise UsageError(f"{action.dest}: {e}") from e


def apply_config(sub: argparse.ArgumentParser, argv, cfg: dict):
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config", "func")}
    unknown = sorted(set(cfg) - set(actions))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    sub.set_defaults(**{k: _convert(actions[k], v) for k, v in cfg.items()})


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _limit_threads(deterministic: bool):
    from threadpoolctl import threadpool_limits

    env = os.environ.get("COMPLEXIRIS_THREADS")
    n = 1 if deterministic else (int(env) if env else None)
    if n is not None:
        threadpool_limits(n)


def _stem(path) -> str:
    name = os.path.basename(path)
    for suffix in (".norm.pgm", ".pgm"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return os.path.splitext(name)[0]


def _writable_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise PermissionError(f"{p}: directory is not writable")
    return p


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(a):
    from .synthdata import SynthSpec, generate

    spec = SynthSpec(a.ids, a.samples, a.noise, a.rotation, a.occlusion, a.alpha, a.contrast,
                     a.seed, a.val_fraction, a.test_fraction)
    out = _writable_dir(a.out)
    samples = generate(spec, out)
    print(f"wrote {len(samples)} samples to {out / 'manifest.csv'}")


def cmd_segment(a):
    from .pgm import read_pgm
    from .preprocess import segment

    g = segment(read_pgm(a.image))
    text = (f"pupil_cx={g.pupil.cx}\npupil_cy={g.pupil.cy}\npupil_r={g.pupil.r}\n"
            f"limbus_r={g.limbus.r}\n"
            f"low_confidence={int(g.pupil.low_confidence or g.limbus.low_confidence)}\n")
    if a.out:
        Path(a.out).write_text(text)
    print(text, end="")


def cmd_normalize(a):
    from .pgm import read_mask, read_pgm, write_mask, write_pgm, from_unit
    from .preprocess import segment, rubber_sheet

    img = read_pgm(a.image)
    occ = None
    if a.occlusion:
        occ = ~read_mask(a.occlusion)  # occlusion masks use 255 = valid
    geom = segment(img)
    norm = rubber_sheet(img, geom, occ)
    out = _writable_dir(a.out)
    stem = _stem(a.image)
    write_pgm(out / f"{stem}.norm.pgm", from_unit(norm.strip))
    write_mask(out / f"{stem}.mask.pgm", norm.mask)
    if geom.pupil.low_confidence or geom.limbus.low_confidence:
        log.warning("%s: low-confidence segmentation", a.image)
    print(f"wrote {out / (stem + '.norm.pgm')}")


def model_config_from(a):
    from .model import PRESETS

    cfg = PRESETS[a.preset](precision=a.precision, real_valued=a.real_valued)
    cfg.validate()
    return cfg


def cmd_train(a):
    from . import train as T
    from .plotting import plot_loss
    from .synthdata import load_split

    strips, masks, ids, _ = load_split(a.manifest, "train")
    if len(set(ids.tolist())) < 2:
        raise ValueError("the train split needs at least two identities")
    cfg = model_config_from(a)
    tc = T.TrainConfig(epochs=a.epochs, steps_per_epoch=a.steps_per_epoch,
                       ids_per_batch=a.ids_per_batch, samples_per_id=a.samples_per_id,
                       triplets=a.triplets, mining=a.mining, alpha=a.alpha,
                       max_shift=a.max_shift, schedule=a.schedule, freeze_gabor=a.freeze_gabor,
                       checkpoint_every=a.checkpoint_every, seed=a.seed)
    out = _writable_dir(a.out)
    (out / "train_config.txt").write_text(tc.to_text() + cfg.to_text())
    res = T.train(strips, masks, ids, cfg, tc, out)
    plot_loss(res.epoch_loss, out / "loss.png")
    print(f"epoch 1 etl {res.epoch_loss[0]:.6f}  epoch {len(res.epoch_loss)} etl {res.epoch_loss[-1]:.6f}")
    print(f"checkpoint {out / 'model.cirn'}")


def cmd_encode(a):
    from . import baseline as B
    from . import model as M
    from .synthdata import load_split

    if bool(a.checkpoint) == bool(a.iriscode):
        raise UsageError("give exactly one of --checkpoint or --iriscode")
    strips, masks, _, samples = load_split(a.manifest, a.split)
    out = _writable_dir(a.out)
    if a.iriscode:
        for s, m, smp in zip(strips, masks, samples):
            B.save_code(B.encode(s, m), out / f"{_stem(smp.strip_path)}.icod")
    else:
        from .train import extract_features

        model = M.load(a.checkpoint)
        h, w = model.config.input_h, model.config.input_w
        if strips.shape[1:] != (h, w):
            raise ValueError(f"strips are {strips.shape[1:]}, checkpoint expects {(h, w)}")
        feats, fmask = extract_features(model, strips, masks)
        for k, smp in enumerate(samples):
            np.savez(out / f"{_stem(smp.strip_path)}.npz", re=feats.re[k], im=feats.im[k], mask=fmask[k])
    print(f"encoded {len(samples)} samples into {out}")


def _load_encoded(features_dir, samples):
    from . import baseline as B
    from .ctensor import ComplexTensor

    d = Path(features_dir)
    stems = [_stem(s.strip_path) for s in samples]
    if all((d / f"{st}.icod").exists() for st in stems):
        return "iriscode", [B.load_code(d / f"{st}.icod") for st in stems]
    missing = [st for st in stems if not (d / f"{st}.npz").exists()]
    if missing:
        raise FileNotFoundError(f"{d}: no encoding for {missing[0]} (and {len(missing) - 1} more)")
    re, im, mk = [], [], []
    for st in stems:
        with np.load(d / f"{st}.npz") as z:
            re.append(z["re"])
            im.append(z["im"])
            mk.append(z["mask"])
    return "network", (ComplexTensor(np.stack(re), np.stack(im)), np.stack(mk))


def cmd_eval(a):
    from . import evaluation as E
    from .baseline import pairwise_hamming
    from .loss import pairwise_shift_distance
    from .plotting import plot_roc, plot_score_hist
    from .synthdata import read_manifest

    samples = [s for s in read_manifest(a.manifest) if s.split == a.split]
    if not samples:
        raise ValueError(f"no samples in split {a.split!r}")
    kind, enc = _load_encoded(a.features, samples)
    if kind == "iriscode":
        dist = pairwise_hamming(enc, a.max_shift)
    else:
        dist = pairwise_shift_distance(enc[0], enc[1], a.max_shift)
    labels = [s.identity for s in samples]
    rows = E.score_matrix(dist, labels, a.cap, a.seed)
    scores = E.scoreset_from_rows(rows)
    out = _writable_dir(a.out)
    E.write_scores(out / "scores.csv", rows)
    E.write_roc(out / "roc.csv", scores)
    summ = E.summary(scores, a.far)
    summ["matcher"] = kind
    E.write_summary(out / "summary.json", summ)
    plot_roc(scores, out / "roc.png", title=f"ROC ({kind})")
    plot_score_hist(scores, out / "scores.png", title=f"scores ({kind})")
    for k in sorted(summ):
        print(f"{k}={summ[k]}")


def cmd_iriscode_grid(a):
    from .baseline import grid_search
    from .synthdata import load_split

    strips, masks, ids, _ = load_split(a.manifest, a.split)
    lams = tuple(float(x) for x in a.wavelengths.split(","))
    ratios = tuple(float(x) for x in a.delta_ratios.split(","))
    best, table = grid_search(strips, masks, ids, lams, ratios, max_shift=a.max_shift)
    print("lambda1,lambda2,delta_ratio,d_prime")
    for row in table:
        print(",".join(f"{v:g}" for v in row))
    print(f"best lambda=({best[0]:g},{best[1]:g}) delta_ratio={best[2]:g} d_prime={best[3]:.4f}")


def cmd_gradcheck(a):
    from . import gradcheck as G

    results = G.run_all(a.seed)
    print(G.format_report(results))
    bad = [r.op for r in results if not r.passed]
    if bad:
        print(f"FAILED: {', '.join(bad)}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(results)} checks below {G.TOLERANCE:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    from .optim import DESK_SCHEDULE, format_schedule

    p = _Parser(prog="complexiris", description="complex-valued iris recognition toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sp = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(s, seed=True):
        s.add_argument("--config", help="key=value file with option defaults")
        if seed:
            s.add_argument("--seed", type=int, default=0)
        s.add_argument("--deterministic", action="store_true",
                       help="single-threaded reductions for bit-identical output")

    s = sp.add_parser("synth", help="generate a synthetic strip dataset")
    common(s)
    s.add_argument("--ids", type=int, default=10)
    s.add_argument("--samples", type=int, default=8)
    s.add_argument("--noise", type=float, default=0.08)
    s.add_argument("--rotation", type=int, default=8, help="max rotation in strip columns")
    s.add_argument("--occlusion", type=float, default=0.3)
    s.add_argument("--alpha", type=float, default=1.0, help="1/f exponent of the texture")
    s.add_argument("--contrast", type=float, default=0.03, help="texture standard deviation")
    s.add_argument("--val-fraction", type=float, default=0.1)
    s.add_argument("--test-fraction", type=float, default=0.3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sp.add_parser("segment", help="locate pupil and limbus circles in an eye image")
    common(s, seed=False)
    s.add_argument("--image", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_segment)

    s = sp.add_parser("normalize", help="segment and unwrap an eye image to a 64x256 strip")
    common(s, seed=False)
    s.add_argument("--image", required=True)
    s.add_argument("--occlusion", help="PGM mask, 255 = valid iris")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_normalize)

    s = sp.add_parser("train", help="train the network with the extended triplet loss")
    common(s)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--preset", default="tiny", choices=["tiny", "paper", "paper2"])
    s.add_argument("--precision", type=int, default=32, choices=[32, 64])
    s.add_argument("--real-valued", action="store_true", help="pure-real ablation variant")
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--steps-per-epoch", type=int, default=2)
    s.add_argument("--ids-per-batch", type=int, default=6)
    s.add_argument("--samples-per-id", type=int, default=3)
    s.add_argument("--triplets", type=int, default=16)
    s.add_argument("--mining", default="hard", choices=["random", "semi_hard", "hard"])
    s.add_argument("--alpha", type=float, default=0.2, help="triplet margin")
    s.add_argument("--max-shift", type=int, default=4)
    s.add_argument("--schedule", default=format_schedule(DESK_SCHEDULE),
                   help="epoch:lr pairs, e.g. 0:0.01,3:0.1")
    s.add_argument("--freeze-gabor", action="store_true")
    s.add_argument("--checkpoint-every", type=int, default=10)
    s.set_defaults(func=cmd_train)

    s = sp.add_parser("encode", help="write network features or IrisCodes per sample")
    common(s)
    s.add_argument("--manifest", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--iriscode", action="store_true")
    s.add_argument("--split", default="test", choices=["train", "val", "test"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sp.add_parser("eval", help="score all pairs and report ROC, EER and FRR at FAR")
    common(s)
    s.add_argument("--features", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=["train", "val", "test"])
    s.add_argument("--far", type=float, default=0.001)
    s.add_argument("--max-shift", type=int, default=4)
    s.add_argument("--cap", type=int, help="subsample each pair list to this size")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sp.add_parser("iriscode-grid", help="grid search of IrisCode wavelength and bandwidth")
    common(s, seed=False)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="train", choices=["train", "val", "test"])
    s.add_argument("--wavelengths", default="4,6,8,12,16")
    s.add_argument("--delta-ratios", default="0.35,0.5,0.7")
    s.add_argument("--max-shift", type=int, default=4)
    s.set_defaults(func=cmd_iriscode_grid)

    s = sp.add_parser("gradcheck", help="finite-difference check of every layer and loss")
    common(s)
    s.set_defaults(func=cmd_gradcheck)
    return p, sp


def main(argv=None) -> int:
    from .baseline import CodeError
    from .model import CheckpointError
    from .optim import NumericalError
    from .pgm import PGMError

    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sp = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            apply_config(sp.choices[args.command], argv, read_config(args.config))
            args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        print(f"complexiris: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"complexiris: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    _limit_threads(args.deterministic)
    try:
        rc = args.func(args)
    except UsageError as e:
        print(f"complexiris: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"complexiris: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, PGMError, CheckpointError, CodeError) as e:
        print(f"complexiris: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if rc is None else rc


if __name__ == "__main__":
    sys.exit(main())
