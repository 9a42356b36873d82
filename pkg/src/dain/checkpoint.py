"""Versioned binary checkpoints with bit-exact round-tripping.

Layout, version 1. All integers little-endian; all floats IEEE-754
binary64 little-endian. Offsets are from the start of the file.

    magic            8 bytes   b"DAINCKPT"
    format_version   u32       1
    kind             u8        0 = dain, 1 = mf
    context_enabled  u8        0 or 1 (always 0 for mf)
    hour_buckets     u16       24 for dain, 0 for mf
    weekday_buckets  u16       7 for dain, 0 for mf
    num_users        u64
    num_items        u64
    embedding_dim    u64
    num_layers       u64       0 for mf
    seed             u64       training seed, recorded for re-splitting
    fingerprint      32 bytes  sha256 of the architecture description
    layer_out_dims   num_layers * u64   (dain only; final entry is 1)
    user id map      u64 count, then per id: u32 byte length + UTF-8 bytes
    item id map      same encoding
    parameters       float64 arrays, row-major, in this order:
        dain: user table, item table, then per layer weights then bias
        mf:   user table, item table, user bias, item bias, global bias
    (end of file -- trailing bytes are treated as corruption)

The recomputed fingerprint must match the stored one on load, so a
header edited by hand is caught even when lengths still line up.
"""

import struct

import numpy as np

from .model import (
    ContextSpec,
    DainModel,
    EmbeddingTable,
    MfModel,
    MlpLayer,
    dain_fingerprint,
    mf_fingerprint,
)
from .data import IdMap

MAGIC = b"DAINCKPT"
FORMAT_VERSION = 1

_KIND_DAIN = 0
_KIND_MF = 1
_HEADER = struct.Struct("<IBBHHQQQQQ32s")
_MASK64 = (1 << 64) - 1


class CheckpointError(Exception):
    """Unreadable, foreign, or damaged checkpoint file."""


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("corrupt checkpoint: truncated file")
    return data


def _write_idmap(f, idmap: IdMap) -> None:
    f.write(struct.pack("<Q", len(idmap)))
    for raw in idmap.raw_ids:
        encoded = raw.encode("utf-8")
        f.write(struct.pack("<I", len(encoded)))
        f.write(encoded)


def _read_idmap(f) -> IdMap:
    (count,) = struct.unpack("<Q", _read_exact(f, 8))
    raw_ids = []
    for _ in range(count):
        (length,) = struct.unpack("<I", _read_exact(f, 4))
        raw_ids.append(_read_exact(f, length).decode("utf-8"))
    return IdMap.from_raw_ids(raw_ids)


def _write_array(f, a: np.ndarray) -> None:
    f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_array(f, shape) -> np.ndarray:
    count = 1
    for dim in shape:
        count *= dim
    data = _read_exact(f, count * 8)
    return np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)


def save_checkpoint(model, user_map: IdMap, item_map: IdMap, seed: int, path) -> None:
    """Serialize a trained model plus its id maps."""
    if isinstance(model, DainModel):
        kind = _KIND_DAIN
        ctx = model.context
        ctx_fields = (int(ctx.enabled), ctx.hour_buckets, ctx.weekday_buckets)
        num_layers = len(model.layers)
    elif isinstance(model, MfModel):
        kind = _KIND_MF
        ctx_fields = (0, 0, 0)
        num_layers = 0
    else:
        raise CheckpointError(f"cannot checkpoint a {type(model).__name__}")
    if len(user_map) != model.num_users or len(item_map) != model.num_items:
        raise CheckpointError("id maps do not match the model's table sizes")
    digest = bytes.fromhex(model.arch_fingerprint)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(
            _HEADER.pack(
                FORMAT_VERSION,
                kind,
                ctx_fields[0],
                ctx_fields[1],
                ctx_fields[2],
                model.num_users,
                model.num_items,
                model.user_table.dim,
                num_layers,
                seed & _MASK64,
                digest,
            )
        )
        if kind == _KIND_DAIN:
            f.write(struct.pack(f"<{num_layers}Q", *(l.out_dim for l in model.layers)))
        _write_idmap(f, user_map)
        _write_idmap(f, item_map)
        _write_array(f, model.user_table.table)
        _write_array(f, model.item_table.table)
        if kind == _KIND_DAIN:
            for layer in model.layers:
                _write_array(f, layer.weights)
                _write_array(f, layer.bias)
        else:
            _write_array(f, model.user_bias)
            _write_array(f, model.item_bias)
            _write_array(f, np.array([model.global_bias]))


def load_checkpoint(path):
    """(model, user_map, item_map, seed) from a version-1 checkpoint."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (
            version,
            kind,
            ctx_enabled,
            hour_buckets,
            weekday_buckets,
            num_users,
            num_items,
            dim,
            num_layers,
            seed,
            digest,
        ) = _HEADER.unpack(_read_exact(f, _HEADER.size))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        if kind not in (_KIND_DAIN, _KIND_MF):
            raise CheckpointError(f"{path}: unknown model kind {kind}")
        layer_dims = []
        if num_layers:
            layer_dims = list(struct.unpack(f"<{num_layers}Q", _read_exact(f, 8 * num_layers)))
        user_map = _read_idmap(f)
        item_map = _read_idmap(f)
        if len(user_map) != num_users or len(item_map) != num_items:
            raise CheckpointError("corrupt checkpoint: id map sizes disagree with header")
        user_table = EmbeddingTable(num_users, dim, _read_array(f, (num_users, dim)))
        item_table = EmbeddingTable(num_items, dim, _read_array(f, (num_items, dim)))
        if kind == _KIND_DAIN:
            if not layer_dims or layer_dims[-1] != 1:
                raise CheckpointError("corrupt checkpoint: bad layer chain")
            context = ContextSpec(
                enabled=bool(ctx_enabled),
                hour_buckets=hour_buckets or 24,
                weekday_buckets=weekday_buckets or 7,
            )
            in_dim = 2 * dim + context.width
            layers = []
            for pos, out_dim in enumerate(layer_dims):
                weights = _read_array(f, (out_dim, in_dim))
                bias = _read_array(f, (out_dim,))
                activation = "identity" if pos == len(layer_dims) - 1 else "relu"
                layers.append(MlpLayer(weights=weights, bias=bias, activation=activation))
                in_dim = out_dim
            expected = dain_fingerprint(num_users, num_items, dim, layer_dims, context)
            model = DainModel(
                user_table=user_table, item_table=item_table, layers=layers, context=context
            )
        else:
            user_bias = _read_array(f, (num_users,))
            item_bias = _read_array(f, (num_items,))
            global_bias = float(_read_array(f, (1,))[0])
            expected = mf_fingerprint(num_users, num_items, dim)
            model = MfModel(
                user_table=user_table,
                item_table=item_table,
                user_bias=user_bias,
                item_bias=item_bias,
                global_bias=global_bias,
            )
        if digest.hex() != expected or model.arch_fingerprint != expected:
            raise CheckpointError("corrupt checkpoint: architecture fingerprint mismatch")
        if f.read(1) != b"":
            raise CheckpointError("corrupt checkpoint: trailing data")
    return model, user_map, item_map, seed
