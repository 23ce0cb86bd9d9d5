"""Command-line pipeline: synth -> bind -> train -> predict -> deform -> eval.

Stages communicate through files so each is independently scriptable.
All randomness flows from --seed; identical command lines produce
byte-identical outputs. Defaults reproduce the reference configuration
(dump-config prints it for auditing).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import formats
from .animate import INFLUENCE_THRESHOLD, evaluate_assets, forward_kinematics, lbs_deform, sample_poses
from .binding import build_binding_table
from .geometry import normalize
from .model import ModelConfig, SkinningModel
from .synthetic import SyntheticRigSpec, generate_synthetic
from .training import TrainConfig, precompute_all, train, write_curve

DEFAULTS = {
    "k": 5,
    "radius": 0.06,
    "max_neighbours": 10,
    "learning_rate": 1e-4,
    "weight_decay": 1e-4,
    "batch_size": 4,
    "epochs": 200,
    "head_dropout": 0.5,
    "pose_count": 10,
    "pose_range_deg": 10.0,
    "influence_threshold": 1e-4,
    "voxel_resolution": 64,
    "binding_mode": "joint",
    "distance_mode": "geodesic",
    "aggregators": ["max", "min", "mean", "std"],
    "scalers": ["identity", "amplification", "attenuation"],
    "use_global_shape": True,
    "use_residual": True,
    "use_munegc": True,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="skingraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate synthetic tube assets")
    synth.add_argument("--n", type=int, default=32)
    synth.add_argument("--seed", type=int, default=7)
    synth.add_argument("--out", required=True)
    synth.add_argument("--joints", type=int, nargs=2, default=[3, 6],
                       metavar=("LO", "HI"))
    synth.add_argument("--verts", type=int, nargs=2, default=[300, 800],
                       metavar=("LO", "HI"))
    synth.add_argument("--temperature", type=float, default=0.25)

    bind = sub.add_parser("bind", help="emit the binding table for inspection")
    bind.add_argument("--mesh", required=True)
    bind.add_argument("--rig", required=True)
    bind.add_argument("--k", type=int, default=DEFAULTS["k"])
    bind.add_argument("--binding-mode", choices=["joint", "bone"],
                      default=DEFAULTS["binding_mode"])
    bind.add_argument("--out", required=True)

    tr = sub.add_parser("train", help="train on a directory of asset pairs")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True, help="checkpoint path")
    tr.add_argument("--curve", help="loss curve CSV path")
    tr.add_argument("--epochs", type=int, default=DEFAULTS["epochs"])
    tr.add_argument("--batch-size", type=int, default=DEFAULTS["batch_size"])
    tr.add_argument("--learning-rate", type=float, default=DEFAULTS["learning_rate"])
    tr.add_argument("--weight-decay", type=float, default=DEFAULTS["weight_decay"])
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--val-count", type=int, default=0,
                    help="assets held out for validation")
    tr.add_argument("--width-scale", type=float, default=1.0)
    tr.add_argument("--checkpoint-every", type=int, default=0)
    tr.add_argument("--jobs", type=int, default=1)
    tr.add_argument("--progress", action="store_true")
    _add_pipeline_flags(tr)

    pred = sub.add_parser("predict", help="predict skinning weights")
    pred.add_argument("--model", required=True)
    pred.add_argument("--mesh", required=True)
    pred.add_argument("--rig", required=True)
    pred.add_argument("--out", required=True, help="weights JSON path")
    pred.add_argument("--out-dense", help="optional dense .npy matrix")
    pred.add_argument("--seed", type=int, default=0)
    pred.add_argument("--jobs", type=int, default=1)
    pred.add_argument("--cache-dir")

    deform = sub.add_parser("deform", help="write posed meshes as OBJ")
    deform.add_argument("--mesh", required=True)
    deform.add_argument("--rig", required=True)
    deform.add_argument("--weights", required=True)
    deform.add_argument("--poses", type=int, default=DEFAULTS["pose_count"])
    deform.add_argument("--range", type=float, default=DEFAULTS["pose_range_deg"])
    deform.add_argument("--seed", type=int, default=0)
    deform.add_argument("--out", required=True, help="output directory")

    ev = sub.add_parser("eval", help="score predictions against ground truth")
    ev.add_argument("--mesh", required=True)
    ev.add_argument("--gt", required=True, help="rig file with ground-truth skin")
    ev.add_argument("--pred", required=True, help="predicted weights JSON")
    ev.add_argument("--poses", type=int, default=DEFAULTS["pose_count"])
    ev.add_argument("--range", type=float, default=DEFAULTS["pose_range_deg"])
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", help="report JSON path (default: stdout)")

    sub.add_parser("dump-config", help="print the default configuration")
    return parser


def _add_pipeline_flags(cmd):
    cmd.add_argument("--k", type=int, default=DEFAULTS["k"])
    cmd.add_argument("--radius", type=float, default=DEFAULTS["radius"])
    cmd.add_argument("--max-neighbours", type=int, default=DEFAULTS["max_neighbours"])
    cmd.add_argument("--voxel-resolution", type=int,
                     default=DEFAULTS["voxel_resolution"])
    cmd.add_argument("--binding-mode", choices=["joint", "bone"],
                     default=DEFAULTS["binding_mode"])
    cmd.add_argument("--distance", choices=["geodesic", "euclidean"],
                     default=DEFAULTS["distance_mode"])
    cmd.add_argument("--no-global-shape", action="store_true")
    cmd.add_argument("--no-residual", action="store_true")
    cmd.add_argument("--no-munegc", action="store_true")
    cmd.add_argument("--aggregators", default=",".join(DEFAULTS["aggregators"]))
    cmd.add_argument("--scalers", default=",".join(DEFAULTS["scalers"]))
    cmd.add_argument("--cache-dir", help="precompute cache (env SKINGRAPH_CACHE)")


def _model_config(args):
    return ModelConfig(
        k=args.k,
        use_global_shape=not args.no_global_shape,
        use_residual=not args.no_residual,
        use_munegc=not args.no_munegc,
        aggregators=tuple(args.aggregators.split(",")),
        scalers=tuple(args.scalers.split(",")),
        binding_mode=args.binding_mode,
        distance_mode=args.distance,
    ).scaled(args.width_scale)


def _cache_dir(args):
    import os

    if getattr(args, "cache_dir", None):
        return Path(args.cache_dir)
    env = os.environ.get("SKINGRAPH_CACHE")
    return Path(env) if env else None


def _load_dataset(directory):
    directory = Path(directory)
    pairs = []
    for obj in sorted(directory.glob("*.obj")):
        rig = obj.with_suffix(".rig.json")
        if not rig.exists():
            rig = obj.with_suffix(".rig")
        if not rig.exists():
            raise FileNotFoundError("no rig file next to %s" % obj)
        pairs.append(formats.load_asset(obj, rig, name=obj.stem))
    if not pairs:
        raise FileNotFoundError("no .obj assets under %s" % directory)
    return pairs


def cmd_synth(args):
    spec = SyntheticRigSpec(
        count=args.n, seed=args.seed,
        joint_range=tuple(args.joints), vertex_range=tuple(args.verts),
        weight_temperature=args.temperature,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for asset in generate_synthetic(spec):
        formats.save_asset(out / ("%s.obj" % asset.name),
                           out / ("%s.rig.json" % asset.name), asset)
    print("wrote %d assets to %s" % (args.n, out))
    return 0


def cmd_bind(args):
    asset = normalize(formats.load_asset(args.mesh, args.rig))
    table = build_binding_table(asset, k=args.k, mode=args.binding_mode)
    doc = {
        "k": args.k,
        "mode": args.binding_mode,
        "vertices": [
            {
                "joints": [asset.skeleton.names[j] for j in table.joints[v]],
                "valid": [bool(x) for x in table.valid[v]],
            }
            for v in range(table.vertex_count)
        ],
    }
    Path(args.out).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print("bound %d vertices to %d-joint slots" % (table.vertex_count, args.k))
    return 0


def cmd_train(args):
    assets = _load_dataset(args.data)
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size,
        learning_rate=args.learning_rate, weight_decay=args.weight_decay,
        seed=args.seed, checkpoint_every=args.checkpoint_every,
        voxel_resolution=args.voxel_resolution, radius=args.radius,
        max_neighbours=args.max_neighbours, model=_model_config(args),
    )
    records = precompute_all(assets, config, cache_dir=_cache_dir(args),
                             jobs=args.jobs)
    if args.val_count:
        order = np.random.default_rng(args.seed).permutation(len(records))
        val_idx = set(order[:args.val_count].tolist())
        train_records = [r for i, r in enumerate(records) if i not in val_idx]
        val_records = [r for i, r in enumerate(records) if i in val_idx]
    else:
        train_records, val_records = records, []
    result = train(train_records, val_records, config,
                   checkpoint_path=args.out, curve_path=args.curve,
                   progress=args.progress)
    print("trained %d epochs in %.1fs; best val KL %.6f (epoch %d)"
          % (config.epochs, result.seconds, result.best_val, result.best_epoch))
    return 0


def cmd_predict(args):
    model = SkinningModel.load(args.model)
    asset = normalize(formats.load_asset(args.mesh, args.rig,
                                         name=Path(args.mesh).stem))
    config = TrainConfig(seed=args.seed, model=model.config)
    from .training import precompute

    record = precompute(asset, config, cache_dir=_cache_dir(args))
    pred = model.predict(record.graphs, record.mesh_attrs, record.skel_attrs,
                         record.binding)
    dense = pred.to_dense(asset.skeleton.joint_count)
    formats.save_weights_json(args.out, asset.skeleton, dense)
    if args.out_dense:
        formats.save_weights_dense(args.out_dense, dense)
    print("wrote weights for %d vertices to %s" % (dense.shape[0], args.out))
    return 0


def cmd_deform(args):
    asset = normalize(formats.load_asset(args.mesh, args.rig))
    weights = formats.load_weights_json(args.weights, asset.skeleton)
    poses = sample_poses(asset.skeleton, args.poses, range_deg=args.range,
                         seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .geometry import Mesh

    for i, pose in enumerate(poses):
        transforms = forward_kinematics(asset.skeleton, pose)
        moved = lbs_deform(asset.mesh, weights, transforms)
        formats.save_obj(out / ("pose_%03d.obj" % i),
                         Mesh(moved, asset.mesh.faces))
    print("wrote %d posed meshes to %s" % (args.poses, out))
    return 0


def cmd_eval(args):
    asset = normalize(formats.load_asset(args.mesh, args.gt))
    if asset.weights is None:
        raise ValueError("ground-truth rig has no skin weights")
    predicted = formats.load_weights_json(args.pred, asset.skeleton)
    name = Path(args.mesh).stem
    poses = sample_poses(asset.skeleton, args.poses, range_deg=args.range,
                         seed=args.seed)
    report = evaluate_assets([(name, predicted, asset.weights, asset)],
                             {name: poses})
    text = json.dumps(report, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_dump_config(args):
    sys.stdout.write(json.dumps(DEFAULTS, indent=1, sort_keys=True) + "\n")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "bind": cmd_bind,
        "train": cmd_train,
        "predict": cmd_predict,
        "deform": cmd_deform,
        "eval": cmd_eval,
        "dump-config": cmd_dump_config,
    }
    try:
        return handlers[args.command](args)
    except Exception as err:  # one-line diagnostic, nonzero exit
        print("skingraph: error: %s" % err, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
