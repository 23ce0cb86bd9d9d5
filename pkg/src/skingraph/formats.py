"""File formats: OBJ meshes, rig files, predictions and checkpoints.

Floats are written with repr-accuracy (%.17g) so parse -> serialize ->
parse is a fixpoint, and all writers emit deterministic bytes.
"""

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .geometry import Mesh, RigAsset, Skeleton

CHECKPOINT_MAGIC = b"SKGC"
CHECKPOINT_VERSION = 1

WEIGHT_SUM_TOL = 1e-6


def _fmt(x):
    return "%.17g" % x


def load_obj(source):
    """Wavefront OBJ subset: v and triangle/polygon f lines.

    Polygons are fan-triangulated; f entries may carry /vt/vn suffixes.
    Everything else is ignored.
    """
    vertices = []
    faces = []
    for lineno, raw in enumerate(_read_lines(source), start=1):
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if tokens[0] == "v":
            if len(tokens) < 4:
                raise ValueError("line %d: vertex needs 3 coordinates" % lineno)
            vertices.append([float(t) for t in tokens[1:4]])
        elif tokens[0] == "f":
            idx = []
            for t in tokens[1:]:
                head = t.split("/")[0]
                i = int(head)
                if i < 0:
                    raise ValueError("line %d: negative OBJ indices unsupported" % lineno)
                idx.append(i - 1)
            if len(idx) < 3:
                raise ValueError("line %d: face needs at least 3 vertices" % lineno)
            for a, b in zip(idx[1:], idx[2:]):
                faces.append((idx[0], a, b))
    mesh_vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    mesh_faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if mesh_faces.size and mesh_faces.max() >= len(mesh_vertices):
        raise ValueError("face index out of range (%d vertices)" % len(mesh_vertices))
    return Mesh(mesh_vertices, mesh_faces)


def save_obj(path, mesh):
    lines = []
    for v in mesh.vertices:
        lines.append("v %s %s %s" % (_fmt(v[0]), _fmt(v[1]), _fmt(v[2])))
    for f in mesh.faces:
        lines.append("f %d %d %d" % (f[0] + 1, f[1] + 1, f[2] + 1))
    Path(path).write_text("\n".join(lines) + "\n")


def load_rig_json(source):
    """Canonical rig: joints with name/position/parent plus sparse skin."""
    doc = json.loads(_read_text(source))
    joints = doc.get("joints")
    if not joints:
        raise ValueError("rig json has no joints")
    names = [j["name"] for j in joints]
    positions = [j["position"] for j in joints]
    parents = [int(j.get("parent", -1)) for j in joints]
    skeleton = Skeleton(names, positions, parents)
    skin = []
    for entry in doc.get("skin", []):
        skin.append((int(entry["vertex"]), dict(entry["weights"])))
    return skeleton, skin


def save_rig_json(path, skeleton, weights=None):
    """Serialize a skeleton (and optional dense [V, J] weights) as rig json."""
    joints = [
        {
            "name": skeleton.names[j],
            "position": [float(c) for c in skeleton.positions[j]],
            "parent": int(skeleton.parents[j]),
        }
        for j in range(skeleton.joint_count)
    ]
    doc = {"joints": joints}
    if weights is not None:
        skin = []
        for v in range(weights.shape[0]):
            nz = np.flatnonzero(weights[v])
            if nz.size == 0:
                continue
            skin.append({
                "vertex": v,
                "weights": {skeleton.names[j]: float(weights[v, j]) for j in nz},
            })
        doc["skin"] = skin
    Path(path).write_text(_json_dumps(doc))


def load_rig_text(source):
    """Line-oriented rig: joints/root/hier/skin records.

    Grammar: ``joints <name> <x> <y> <z>``, ``root <name>``,
    ``hier <parentName> <childName>``, ``skin <vertexIdx> (<name> <w>)+``.
    """
    names, positions = [], []
    root_name = None
    hier = []
    skin = []
    for lineno, raw in enumerate(_read_lines(source), start=1):
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        kind = tokens[0]
        if kind == "joints":
            if len(tokens) != 5:
                raise ValueError("line %d: joints record needs name + 3 floats" % lineno)
            names.append(tokens[1])
            positions.append([float(t) for t in tokens[2:5]])
        elif kind == "root":
            if root_name is not None:
                raise ValueError("line %d: multiple root records" % lineno)
            root_name = tokens[1]
        elif kind == "hier":
            if len(tokens) != 3:
                raise ValueError("line %d: hier record needs parent + child" % lineno)
            hier.append((lineno, tokens[1], tokens[2]))
        elif kind == "skin":
            if len(tokens) < 4 or len(tokens) % 2 != 0:
                raise ValueError("line %d: skin record needs vertex + (name, w) pairs" % lineno)
            pairs = {}
            for name, w in zip(tokens[2::2], tokens[3::2]):
                pairs[name] = float(w)
            skin.append((lineno, int(tokens[1]), pairs))
        else:
            raise ValueError("line %d: unknown record %r" % (lineno, kind))
    if root_name is None:
        raise ValueError("rig text declares no root")
    index = {n: i for i, n in enumerate(names)}
    if root_name not in index:
        raise ValueError("root %r is not a declared joint" % root_name)
    parents = [-2] * len(names)
    parents[index[root_name]] = -1
    for lineno, parent, child in hier:
        if parent not in index or child not in index:
            raise ValueError("line %d: hier references unknown joint" % lineno)
        if parents[index[child]] != -2:
            raise ValueError("line %d: joint %r already has a parent" % (lineno, child))
        parents[index[child]] = index[parent]
    orphans = [names[i] for i, p in enumerate(parents) if p == -2]
    if orphans:
        raise ValueError("joints with no hier record: %s" % ", ".join(orphans))
    skeleton = Skeleton(names, positions, parents)
    entries = []
    for lineno, vertex, pairs in skin:
        for name in pairs:
            if name not in index:
                raise ValueError("line %d: skin references unknown joint %r" % (lineno, name))
        entries.append((vertex, pairs))
    return skeleton, entries


def save_rig_text(path, skeleton, weights=None):
    lines = []
    for j in range(skeleton.joint_count):
        p = skeleton.positions[j]
        lines.append("joints %s %s %s %s" % (skeleton.names[j], _fmt(p[0]), _fmt(p[1]), _fmt(p[2])))
    lines.append("root %s" % skeleton.names[skeleton.root])
    for parent, child in skeleton.bones():
        lines.append("hier %s %s" % (skeleton.names[parent], skeleton.names[child]))
    if weights is not None:
        for v in range(weights.shape[0]):
            nz = np.flatnonzero(weights[v])
            if nz.size == 0:
                continue
            parts = " ".join(
                "%s %s" % (skeleton.names[j], _fmt(weights[v, j])) for j in nz
            )
            lines.append("skin %d %s" % (v, parts))
    Path(path).write_text("\n".join(lines) + "\n")


def _skin_to_dense(skin, skeleton, vertex_count):
    weights = np.zeros((vertex_count, skeleton.joint_count))
    for entry_no, (vertex, pairs) in enumerate(skin):
        if not 0 <= vertex < vertex_count:
            raise ValueError(
                "skin entry %d: vertex %d out of range (%d vertices)"
                % (entry_no, vertex, vertex_count)
            )
        for name, w in pairs.items():
            j = skeleton.index_of(name)
            if w < 0.0:
                raise ValueError(
                    "skin entry %d: negative weight %r for joint %r" % (entry_no, w, name)
                )
            weights[vertex, j] += w
    totals = weights.sum(axis=1)
    # renormalize only rows that need it, so parsing is idempotent at
    # the bit level (dividing by a sum within 1e-12 of 1 would flip ulps
    # on every pass)
    needs = (totals > 0.0) & (np.abs(totals - 1.0) > 1e-12)
    weights[needs] /= totals[needs, None]
    return weights


def load_asset(mesh_source, rig_source, name=""):
    """Parse mesh + rig into a consistent RigAsset.

    Ground-truth weights, when present, are renormalized to sum to one
    per covered vertex.
    """
    mesh = load_obj(mesh_source)
    text = _read_text(rig_source)
    if text.lstrip().startswith("{"):
        skeleton, skin = load_rig_json(text)
    else:
        skeleton, skin = load_rig_text(text)
    weights = _skin_to_dense(skin, skeleton, mesh.vertex_count) if skin else None
    return RigAsset(mesh=mesh, skeleton=skeleton, weights=weights, name=name)


def save_asset(mesh_path, rig_path, asset):
    save_obj(mesh_path, asset.mesh)
    save_rig_json(rig_path, asset.skeleton, asset.weights)


def save_weights_json(path, skeleton, dense_weights, threshold=0.0):
    """Per-vertex joint-name -> weight maps (skipping zeros)."""
    doc = {
        "joints": list(skeleton.names),
        "vertices": [
            {
                skeleton.names[j]: float(dense_weights[v, j])
                for j in np.flatnonzero(dense_weights[v] > threshold)
            }
            for v in range(dense_weights.shape[0])
        ],
    }
    Path(path).write_text(_json_dumps(doc))


def load_weights_json(source, skeleton=None):
    """Dense [V, J] weights; joint order from the file's joint list."""
    doc = json.loads(_read_text(source))
    names = doc["joints"]
    if skeleton is not None:
        index = {n: skeleton.index_of(n) for n in names}
        n_joints = skeleton.joint_count
    else:
        index = {n: i for i, n in enumerate(names)}
        n_joints = len(names)
    rows = doc["vertices"]
    weights = np.zeros((len(rows), n_joints))
    for v, row in enumerate(rows):
        for name, w in row.items():
            weights[v, index[name]] = float(w)
    return weights


def save_weights_dense(path, dense_weights):
    np.save(path, np.asarray(dense_weights, dtype=np.float64))


def save_checkpoint(path, params, header):
    """Flat binary container of named float64 tensors plus a JSON header.

    Layout (little endian): magic "SKGC", u32 version, u64 header byte
    length, UTF-8 JSON header, u32 tensor count, then per tensor:
    u16 name length, name bytes, u8 ndim, u64 per-axis extents and the
    row-major float64 payload.
    """
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    header_bytes = _json_dumps(header).encode("utf-8")
    blob += struct.pack("<Q", len(header_bytes))
    blob += header_bytes
    params = list(params)
    blob += struct.pack("<I", len(params))
    for name, value in params:
        value = np.ascontiguousarray(value, dtype=np.float64)
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", value.ndim)
        for extent in value.shape:
            blob += struct.pack("<Q", extent)
        blob += value.tobytes(order="C")
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path):
    """Inverse of save_checkpoint: (OrderedDict name -> ndarray, header)."""
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    if bytes(view[:4]) != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version %d" % version)
    (header_len,) = struct.unpack_from("<Q", view, 8)
    offset = 16
    header = json.loads(bytes(view[offset:offset + header_len]).decode("utf-8"))
    offset += header_len
    (count,) = struct.unpack_from("<I", view, offset)
    offset += 4
    params = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", view, offset)
        offset += 2
        name = bytes(view[offset:offset + name_len]).decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", view, offset)
        offset += 1
        shape = struct.unpack_from("<%dQ" % ndim, view, offset)
        offset += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        value = np.frombuffer(view, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += 8 * n
        params[name] = value.copy()
    if offset != len(blob):
        raise ValueError("trailing bytes in checkpoint")
    return params, header


def _json_dumps(doc):
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _read_text(source):
    """Paths are read; strings containing newlines are taken as content."""
    if isinstance(source, Path):
        return source.read_text()
    if isinstance(source, str):
        if "\n" in source:
            return source
        return Path(source).read_text()
    return source.read()


def _read_lines(source):
    return _read_text(source).splitlines()
