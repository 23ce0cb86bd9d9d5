"""Four-stage skinning network.

Stage 1 (graphs, binding) lives in the binding module. Stage 2 runs the
two input streams: residual MAGC blocks over the mesh graph and plain
MAGC blocks over the skeleton graph. Stage 3 fuses both streams over the
binding edges after tagging node types, then concatenates pooled global
shape descriptors to every mesh row. Stage 4 stacks multi-neighbourhood
convolutions over the mesh topology + radius edges and predicts one
probability per bound joint slot through a dropout-regularised head.
"""

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import formats
from .binding import mesh_feature_width
from .graph import (
    AGGREGATOR_ORDER,
    SCALER_ORDER,
    DegreeStats,
    MagcConfig,
    MagcLayer,
    NeighbourhoodKind,
)
from .nn import Linear, Mlp, MlpSpec
from .tensor import (
    Tensor,
    add,
    broadcast_rows,
    concat,
    gather_rows,
    masked_softmax,
    reduce_max_rows,
    reduce_mean_rows,
    relu,
)

MESH_KIND = NeighbourhoodKind.MESH_TOPOLOGY
RADIUS_KIND = NeighbourhoodKind.MESH_RADIUS
SKELETON_KIND = NeighbourhoodKind.SKELETON_TOPOLOGY
BINDING_KIND = NeighbourhoodKind.BINDING


@dataclass(frozen=True)
class ModelConfig:
    """Architecture widths plus the study toggles."""

    k: int = 5
    mesh_input_mlp: tuple = (64, 128)
    mesh_widths: tuple = (128, 256, 512)
    skeleton_input_mlp: tuple = (64,)
    skeleton_widths: tuple = (128, 256, 512)
    meshskel_width: int = 512
    global_width: int = 256
    skinning_widths: tuple = (256, 128, 64)
    head_widths: tuple = (64, 32)
    head_dropout: float = 0.5
    use_global_shape: bool = True
    use_residual: bool = True
    use_munegc: bool = True
    aggregators: tuple = AGGREGATOR_ORDER
    scalers: tuple = SCALER_ORDER
    edge_fn: str = "concat_diff"
    binding_mode: str = "joint"
    distance_mode: str = "geodesic"
    global_pool: str = "max"

    def __post_init__(self):
        if self.mesh_widths[-1] != self.skeleton_widths[-1]:
            raise ValueError("mesh and skeleton streams must end at one width")
        if self.binding_mode not in ("joint", "bone"):
            raise ValueError("unknown binding mode %r" % (self.binding_mode,))
        if self.distance_mode not in ("geodesic", "euclidean"):
            raise ValueError("unknown distance mode %r" % (self.distance_mode,))
        if self.global_pool not in ("max", "mean"):
            raise ValueError("unknown global pool %r" % (self.global_pool,))

    def magc(self, out_width):
        return MagcConfig(aggregators=self.aggregators, scalers=self.scalers,
                          out_width=out_width, edge_fn=self.edge_fn)

    def scaled(self, factor):
        """Same architecture with every width multiplied by factor."""
        s = lambda w: max(1, int(round(w * factor)))
        return replace(
            self,
            mesh_input_mlp=tuple(s(w) for w in self.mesh_input_mlp),
            mesh_widths=tuple(s(w) for w in self.mesh_widths),
            skeleton_input_mlp=tuple(s(w) for w in self.skeleton_input_mlp),
            skeleton_widths=tuple(s(w) for w in self.skeleton_widths),
            meshskel_width=s(self.meshskel_width),
            global_width=s(self.global_width),
            skinning_widths=tuple(s(w) for w in self.skinning_widths),
            head_widths=tuple(s(w) for w in self.head_widths),
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        for key in ("mesh_input_mlp", "mesh_widths", "skeleton_input_mlp",
                    "skeleton_widths", "skinning_widths", "head_widths",
                    "aggregators", "scalers"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


class ResidualMagc:
    """Two stacked MAGCs plus a projected short connection."""

    def __init__(self, in_width, out_width, config, rng, residual=True):
        self.residual = residual
        self.magc1 = MagcLayer(in_width, config.magc(out_width), rng)
        self.magc2 = MagcLayer(out_width, config.magc(out_width), rng)
        self.project = None
        if residual and in_width != out_width:
            self.project = Linear(in_width, out_width, rng, bias=False)

    def __call__(self, graph, kind, x, d_train):
        h = self.magc2(graph, kind, self.magc1(graph, kind, x, d_train), d_train)
        if not self.residual:
            return h
        shortcut = x if self.project is None else self.project(x)
        return add(h, shortcut)

    def parameters(self):
        params = [("magc1.%s" % n, p) for n, p in self.magc1.parameters()]
        params += [("magc2.%s" % n, p) for n, p in self.magc2.parameters()]
        if self.project is not None:
            params += [("project.%s" % n, p) for n, p in self.project.parameters()]
        return params


class Munegc:
    """MAGC per neighbourhood kind, fused by an outer MLP."""

    def __init__(self, in_width, out_width, config, rng,
                 kinds=(MESH_KIND, RADIUS_KIND)):
        self.kinds = tuple(kinds)
        self.inner = [MagcLayer(in_width, config.magc(out_width), rng)
                      for _ in self.kinds]
        self.outer = Linear(len(self.kinds) * out_width, out_width, rng)

    def __call__(self, graph, x, stats):
        parts = [
            layer(graph, kind, x, stats.get(kind))
            for layer, kind in zip(self.inner, self.kinds)
        ]
        return relu(self.outer(concat(parts, axis=1)))

    def parameters(self):
        params = []
        for i, layer in enumerate(self.inner):
            params += [("inner%d.%s" % (i, n), p) for n, p in layer.parameters()]
        params += [("outer.%s" % n, p) for n, p in self.outer.parameters()]
        return params


@dataclass
class SkinningPrediction:
    """Per-vertex probabilities over the k bound joint slots."""

    probabilities: np.ndarray  # [V, k]
    binding: object            # BindingTable

    def to_dense(self, n_joints):
        """Scatter slot probabilities into a dense [V, J] weight matrix."""
        v, k = self.probabilities.shape
        dense = np.zeros((v, n_joints))
        rows = np.repeat(np.arange(v), k)
        np.add.at(
            dense,
            (rows, self.binding.joints.ravel()),
            (self.probabilities * self.binding.valid).ravel(),
        )
        return dense


class SkinningModel:
    """The full network; owns its parameters and the degree statistics."""

    def __init__(self, config, degree_stats, seed=0):
        self.config = config
        self.degree_stats = degree_stats
        rng = np.random.default_rng(seed)

        mesh_in = mesh_feature_width(config.k)
        self.mesh_input = Mlp(mesh_in, MlpSpec(config.mesh_input_mlp), rng)
        self.skeleton_input = Mlp(3, MlpSpec(config.skeleton_input_mlp), rng)

        self.mesh_blocks = []
        width = self.mesh_input.out_width
        for out in config.mesh_widths:
            self.mesh_blocks.append(
                ResidualMagc(width, out, config, rng, residual=config.use_residual)
            )
            width = out
        self.skeleton_blocks = []
        width = self.skeleton_input.out_width
        for out in config.skeleton_widths:
            self.skeleton_blocks.append(MagcLayer(width, config.magc(out), rng))
            width = out

        self.meshskel = MagcLayer(
            config.mesh_widths[-1] + 1, config.magc(config.meshskel_width), rng
        )
        if config.use_global_shape:
            self.global_mesh = Mlp(config.mesh_widths[-1],
                                   MlpSpec((config.global_width,)), rng)
            self.global_skeleton = Mlp(config.skeleton_widths[-1],
                                       MlpSpec((config.global_width,)), rng)
            stage4_in = config.meshskel_width + 2 * config.global_width
        else:
            self.global_mesh = None
            self.global_skeleton = None
            stage4_in = config.meshskel_width

        self.skinning_blocks = []
        width = stage4_in
        for out in config.skinning_widths:
            if config.use_munegc:
                self.skinning_blocks.append(Munegc(width, out, config, rng))
            else:
                self.skinning_blocks.append(MagcLayer(width, config.magc(out), rng))
            width = out

        head_widths = tuple(config.head_widths) + (config.k,)
        self.head = Mlp(width, MlpSpec(
            head_widths,
            activation=("relu",) * len(config.head_widths) + ("none",),
            dropout_before=(config.head_dropout,) * len(head_widths),
        ), rng)

    # stage 2: independent streams
    def _mesh_stream(self, graphs, mesh_attrs, stats):
        x = self.mesh_input(Tensor(mesh_attrs))
        for block in self.mesh_blocks:
            x = block(graphs.mesh, MESH_KIND, x, stats.get(MESH_KIND))
        return x

    def _skeleton_stream(self, graphs, skel_attrs, stats):
        x = self.skeleton_input(Tensor(skel_attrs))
        for block in self.skeleton_blocks:
            x = block(graphs.skeleton, SKELETON_KIND, x, stats.get(SKELETON_KIND))
        return x

    def forward(self, graphs, mesh_attrs, skel_attrs, binding,
                training=False, rng=None):
        """Slot probabilities [V, k] aligned with the binding table."""
        stats = self.degree_stats
        n_v = mesh_attrs.shape[0]
        x_mesh = self._mesh_stream(graphs, mesh_attrs, stats)
        x_skel = self._skeleton_stream(graphs, skel_attrs, stats)

        # stage 3: type tag, fuse over binding edges, keep mesh rows
        tagged = concat([
            concat([Tensor(np.zeros((n_v, 1))), x_mesh], axis=1),
            concat([Tensor(np.ones((x_skel.shape[0], 1))), x_skel], axis=1),
        ], axis=0)
        fused = self.meshskel(graphs.mesh_skeleton, BINDING_KIND, tagged,
                              stats.get(BINDING_KIND))
        mesh_rows = gather_rows(fused, np.arange(n_v))

        if self.config.use_global_shape:
            pool = reduce_max_rows if self.config.global_pool == "max" else reduce_mean_rows
            g_mesh = self.global_mesh(pool(x_mesh))
            g_skel = self.global_skeleton(pool(x_skel))
            mesh_rows = concat([
                mesh_rows,
                broadcast_rows(g_mesh, n_v),
                broadcast_rows(g_skel, n_v),
            ], axis=1)

        # stage 4: local shape enrichment + head
        h = mesh_rows
        for block in self.skinning_blocks:
            if isinstance(block, Munegc):
                h = block(graphs.mesh, h, stats)
            else:
                h = block(graphs.mesh, MESH_KIND, h, stats.get(MESH_KIND))
        logits = self.head(h, training=training, rng=rng)
        return masked_softmax(logits, binding.valid.astype(np.float64))

    def predict(self, graphs, mesh_attrs, skel_attrs, binding):
        probs = self.forward(graphs, mesh_attrs, skel_attrs, binding,
                             training=False)
        return SkinningPrediction(probabilities=probs.data, binding=binding)

    def parameters(self):
        groups = [("mesh_input", self.mesh_input),
                  ("skeleton_input", self.skeleton_input)]
        groups += [("mesh.block%d" % i, b) for i, b in enumerate(self.mesh_blocks)]
        groups += [("skeleton.block%d" % i, b)
                   for i, b in enumerate(self.skeleton_blocks)]
        groups.append(("meshskel", self.meshskel))
        if self.global_mesh is not None:
            groups.append(("global_mesh", self.global_mesh))
            groups.append(("global_skeleton", self.global_skeleton))
        groups += [("skin.block%d" % i, b)
                   for i, b in enumerate(self.skinning_blocks)]
        groups.append(("head", self.head))
        params = []
        for prefix, obj in groups:
            params += [("%s.%s" % (prefix, n), p) for n, p in obj.parameters()]
        return params

    def parameter_shapes(self):
        return {name: p.data.shape for name, p in self.parameters()}

    def save(self, path):
        header = {
            "config": self.config.to_dict(),
            "degree_stats": self.degree_stats.as_dict(),
        }
        formats.save_checkpoint(path, [(n, p.data) for n, p in self.parameters()],
                                header)

    @classmethod
    def load(cls, path):
        params, header = formats.load_checkpoint(path)
        config = ModelConfig.from_dict(header["config"])
        stats = DegreeStats(values=dict(header["degree_stats"]), source="loaded")
        model = cls(config, stats, seed=0)
        own = dict(model.parameters())
        if set(own) != set(params):
            raise ValueError("checkpoint parameters do not match the architecture")
        for name, value in params.items():
            if own[name].data.shape != value.shape:
                raise ValueError("shape mismatch for %r" % name)
            own[name].data[...] = value
        return model


def binding_targets(asset, binding):
    """Per-vertex target distribution over the k bound slots + loss mask.

    Ground-truth mass is gathered at the bound joints and renormalized;
    vertices whose bound joints carry no mass are masked out entirely
    (the binding missed the true joint).
    """
    if asset.weights is None:
        raise ValueError("asset %r has no ground-truth weights" % (asset.name,))
    v_rows = np.arange(binding.vertex_count)[:, None]
    gathered = asset.weights[v_rows, binding.joints] * binding.valid
    # bone mode may repeat one joint across slots; split its mass evenly
    # so the target stays a distribution over slots
    same = (binding.joints[:, :, None] == binding.joints[:, None, :])
    same &= binding.valid[:, :, None] & binding.valid[:, None, :]
    multiplicity = same.sum(axis=2)
    gathered = gathered / np.maximum(multiplicity, 1)
    totals = gathered.sum(axis=1, keepdims=True)
    has_mass = totals[:, 0] > 1e-12
    target = np.where(has_mass[:, None], gathered / np.where(totals > 0, totals, 1.0), 0.0)
    mask = binding.valid & has_mass[:, None]
    return target, mask.astype(np.float64)
