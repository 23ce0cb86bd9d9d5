"""Dataset precomputation (with on-disk caching) and the training loop."""

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binding import AssetGraphs, BindingTable, assemble_features, build_binding_table, build_graphs
from .geometry import normalize
from .graph import DegreeStats, Graph, NeighbourhoodKind, compute_degree_stats
from .model import ModelConfig, SkinningModel, binding_targets
from .nn import kl_loss
from .optim import RAdam
from .tensor import scale
from .voxel import solver_for, voxelize

MT = NeighbourhoodKind.MESH_TOPOLOGY
MR = NeighbourhoodKind.MESH_RADIUS
SK = NeighbourhoodKind.SKELETON_TOPOLOGY
BD = NeighbourhoodKind.BINDING


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 4
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 0
    voxel_resolution: int = 64
    radius: float = 0.06
    max_neighbours: int = 10
    model: ModelConfig = field(default_factory=ModelConfig)


@dataclass
class PrecomputedAsset:
    """Everything the forward pass and the loss need for one asset."""

    name: str
    asset: object
    binding: BindingTable
    graphs: AssetGraphs
    mesh_attrs: np.ndarray
    skel_attrs: np.ndarray
    distances: np.ndarray
    target: np.ndarray = None
    loss_mask: np.ndarray = None
    from_cache: bool = False


def _asset_fingerprint(asset, config):
    h = hashlib.sha256()
    h.update(asset.mesh.vertices.tobytes())
    h.update(asset.mesh.faces.tobytes())
    h.update(asset.skeleton.positions.tobytes())
    h.update(asset.skeleton.parents.tobytes())
    h.update("|".join(asset.skeleton.names).encode())
    if asset.weights is not None:
        h.update(asset.weights.tobytes())
    knobs = (config.model.k, config.model.binding_mode, config.model.distance_mode,
             config.voxel_resolution, config.radius, config.max_neighbours,
             config.seed)
    h.update(repr(knobs).encode())
    return h.hexdigest()[:16]


def _radius_seed(config, fingerprint):
    return int(fingerprint[:8], 16) ^ (config.seed & 0xFFFFFFFF)


def joint_distance_table(asset, config):
    """Vertex-to-joint distances: volumetric geodesic or plain Euclidean."""
    if config.model.distance_mode == "euclidean":
        return np.linalg.norm(
            asset.mesh.vertices[:, None, :] - asset.skeleton.positions[None], axis=2
        )
    grid = voxelize(asset.mesh, resolution=config.voxel_resolution)
    distances, _ = solver_for(grid).vertex_joint_distances(
        asset.mesh.vertices, asset.skeleton.positions
    )
    return distances


def precompute(asset, config, cache_dir=None):
    """Binding, graphs, features and loss targets for one asset.

    Results are cached on disk keyed by a content hash of the asset and
    the relevant knobs, so unchanged reruns skip the geometry work.
    """
    asset = normalize(asset)
    fingerprint = _asset_fingerprint(asset, config)
    cache_file = None
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        cache_file = cache_dir / ("%s-%s.npz" % (asset.name or "asset", fingerprint))
        if cache_file.exists():
            return _load_record(asset, cache_file)

    try:
        binding = build_binding_table(asset, k=config.model.k,
                                      mode=config.model.binding_mode)
        graphs = build_graphs(asset, binding, r=config.radius,
                              max_n=config.max_neighbours,
                              seed=_radius_seed(config, fingerprint))
        distances = joint_distance_table(asset, config)
        mesh_attrs, skel_attrs = assemble_features(asset, binding, distances)
    except Exception as err:
        raise type(err)("%s (asset %r)" % (err, asset.name)) from err
    target = mask = None
    if asset.weights is not None:
        target, mask = binding_targets(asset, binding)
    record = PrecomputedAsset(
        name=asset.name, asset=asset, binding=binding, graphs=graphs,
        mesh_attrs=mesh_attrs, skel_attrs=skel_attrs, distances=distances,
        target=target, loss_mask=mask,
    )
    if cache_file is not None:
        _save_record(record, cache_file)
    return record


def _save_record(record, path):
    arrays = {
        "binding_joints": record.binding.joints,
        "binding_valid": record.binding.valid,
        "binding_bone_child": record.binding.bone_child,
        "mesh_topology": record.graphs.mesh.edge_sets[MT],
        "mesh_radius": record.graphs.mesh.edge_sets[MR],
        "skeleton_topology": record.graphs.skeleton.edge_sets[SK],
        "binding_edges": record.graphs.mesh_skeleton.edge_sets[BD],
        "meshskel_node_kind": record.graphs.mesh_skeleton.node_kind,
        "mesh_attrs": record.mesh_attrs,
        "skel_attrs": record.skel_attrs,
        "distances": record.distances,
    }
    if record.target is not None:
        arrays["target"] = record.target
        arrays["loss_mask"] = record.loss_mask
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)


def _load_record(asset, path):
    data = np.load(path)
    binding = BindingTable(
        joints=data["binding_joints"],
        valid=data["binding_valid"],
        bone_child=data["binding_bone_child"],
    )
    n_v = asset.mesh.vertex_count
    n_j = asset.skeleton.joint_count
    graphs = AssetGraphs(
        mesh=Graph(n_v, {MT: data["mesh_topology"], MR: data["mesh_radius"]}),
        skeleton=Graph(n_j, {SK: data["skeleton_topology"]}),
        mesh_skeleton=Graph(n_v + n_j, {BD: data["binding_edges"]},
                            node_kind=data["meshskel_node_kind"]),
    )
    return PrecomputedAsset(
        name=asset.name, asset=asset, binding=binding, graphs=graphs,
        mesh_attrs=data["mesh_attrs"], skel_attrs=data["skel_attrs"],
        distances=data["distances"],
        target=data["target"] if "target" in data else None,
        loss_mask=data["loss_mask"] if "loss_mask" in data else None,
        from_cache=True,
    )


def precompute_all(assets, config, cache_dir=None, jobs=1):
    """Precompute a list of assets, optionally fanning out to workers."""
    if jobs <= 1 or len(assets) <= 1:
        return [precompute(a, config, cache_dir) for a in assets]
    from concurrent.futures import ProcessPoolExecutor

    if cache_dir is None:
        raise ValueError("parallel precompute needs a cache directory")
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        list(pool.map(_precompute_to_cache, [(a, config, cache_dir) for a in assets]))
    return [precompute(a, config, cache_dir) for a in assets]


def _precompute_to_cache(args):
    asset, config, cache_dir = args
    precompute(asset, config, cache_dir)
    return None


def training_degree_stats(records):
    """Mean in-degree per edge kind over the training split's graphs."""
    values = {}
    values.update(compute_degree_stats([r.graphs.mesh for r in records], [MT, MR]).values)
    values.update(compute_degree_stats([r.graphs.skeleton for r in records], [SK]).values)
    values.update(compute_degree_stats(
        [r.graphs.mesh_skeleton for r in records], [BD]).values)
    return DegreeStats(values=values, source="computed")


def asset_loss(model, record, training=False, rng=None):
    probs = model.forward(record.graphs, record.mesh_attrs, record.skel_attrs,
                          record.binding, training=training, rng=rng)
    return kl_loss(record.target, probs, record.loss_mask)


@dataclass
class TrainResult:
    """curve holds the dropout-noised running losses per epoch;
    final_train_kl re-measures the train split in eval mode with the
    final-epoch weights. The returned model carries the best-validation
    parameters."""

    model: SkinningModel
    curve: list           # (epoch, train_kl, val_kl)
    best_epoch: int
    best_val: float
    final_train_kl: float
    seconds: float


def train(train_records, val_records, config, checkpoint_path=None,
          curve_path=None, progress=False):
    """Mini-batch training with gradient accumulation across assets.

    Batches hold whole assets (graph sizes differ); each asset in a
    batch contributes an equal share of the gradient. The checkpoint
    with the best validation loss is retained.
    """
    if not train_records:
        raise ValueError("empty training split")
    for r in train_records + val_records:
        if r.target is None:
            raise ValueError("asset %r has no ground-truth weights" % r.name)
    t0 = time.perf_counter()
    stats = training_degree_stats(train_records)
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_seed = int(seeds[0].generate_state(1)[0])
    shuffle_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])

    model = SkinningModel(config.model, stats, seed=init_seed)
    optimizer = RAdam(model.parameters(), learning_rate=config.learning_rate,
                      weight_decay=config.weight_decay)

    curve = []
    best = (np.inf, -1, None)  # val loss, epoch, params snapshot
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_records))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_records[i] for i in order[start:start + config.batch_size]]
            optimizer.zero_grad()
            share = 1.0 / len(batch)
            for record in batch:
                loss = asset_loss(model, record, training=True, rng=dropout_rng)
                value = loss.item()
                if not np.isfinite(value):
                    raise FloatingPointError(
                        "non-finite loss in epoch %d batch of %s"
                        % (epoch, [r.name for r in batch])
                    )
                epoch_losses.append(value)
                scale(loss, share).backward()
            optimizer.step()
        train_kl = float(np.mean(epoch_losses))
        if val_records:
            val_kl = float(np.mean([
                asset_loss(model, r).item() for r in val_records
            ]))
        else:
            val_kl = train_kl
        curve.append((epoch, train_kl, val_kl))
        if progress:
            print("epoch %d train_kl %.6f val_kl %.6f" % (epoch, train_kl, val_kl))
        if val_kl < best[0]:
            best = (val_kl, epoch, [(n, p.data.copy()) for n, p in model.parameters()])
        if (config.checkpoint_every and checkpoint_path
                and epoch % config.checkpoint_every == 0):
            model.save(_epoch_path(checkpoint_path, epoch))

    final_train_kl = float(np.mean([
        asset_loss(model, r).item() for r in train_records
    ]))
    if best[2] is not None:
        own = dict(model.parameters())
        for name, value in best[2]:
            own[name].data[...] = value
    if checkpoint_path is not None:
        model.save(checkpoint_path)
    if curve_path is not None:
        write_curve(curve_path, curve)
    return TrainResult(model=model, curve=curve, best_epoch=best[1],
                       best_val=best[0], final_train_kl=final_train_kl,
                       seconds=time.perf_counter() - t0)


def _epoch_path(path, epoch):
    path = Path(path)
    return path.with_name("%s.epoch%04d%s" % (path.stem, epoch, path.suffix))


def write_curve(path, curve):
    lines = ["epoch,train_kl,val_kl"]
    for epoch, train_kl, val_kl in curve:
        lines.append("%d,%.17g,%.17g" % (epoch, train_kl, val_kl))
    Path(path).write_text("\n".join(lines) + "\n")
