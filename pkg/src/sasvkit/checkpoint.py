"""Binary checkpoints for the pooling back-end plus its task head.

Layout (all integers little-endian uint32, all floats little-endian
float64):

    magic   b"MHFA1\\x00\\x00\\x00"          8 bytes
    header  version, L, D, H, D_cmp, E       6 x uint32
            head_kind (0 none, 1 cm, 2 asv), head_classes
    arrays  w_k(L) w_v(L) W_k(D*D_cmp) W_v(D*D_cmp) W_att(D_cmp*H)
            W_out(H*D_cmp*E) b_out(E)
    head    cm:  w(E), b(1)
            asv: weights(head_classes * E)
"""

import struct

import numpy as np

from .losses import AAMHead, CMHead
from .mhfa import MHFAParams
from .protocol_io import FormatError

MAGIC = b"MHFA1\x00\x00\x00"
VERSION = 1
HEAD_NONE, HEAD_CM, HEAD_ASV = 0, 1, 2

__all__ = ["save_checkpoint", "load_checkpoint"]


def save_checkpoint(path, params, head=None):
    cfg = params.config()
    if head is None:
        head_kind, head_classes = HEAD_NONE, 0
    elif isinstance(head, CMHead):
        head_kind, head_classes = HEAD_CM, 0
    elif isinstance(head, AAMHead):
        head_kind, head_classes = HEAD_ASV, head.weights.shape[0]
    else:
        raise ValueError(f"unknown head type {type(head).__name__}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<8I", VERSION, cfg.num_layers, cfg.input_dim,
                            cfg.num_heads, cfg.compression_dim, cfg.embed_dim,
                            head_kind, head_classes))
        for arr in params.fields().values():
            f.write(np.asarray(arr, dtype="<f8").tobytes(order="C"))
        if head_kind == HEAD_CM:
            f.write(np.asarray(head.w, dtype="<f8").tobytes(order="C"))
            f.write(struct.pack("<d", float(np.asarray(head.b).reshape(-1)[0])))
        elif head_kind == HEAD_ASV:
            f.write(np.asarray(head.weights, dtype="<f8").tobytes(order="C"))


def load_checkpoint(path):
    """Returns (MHFAParams, head) with head None, CMHead or AAMHead."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an MHFA1 checkpoint")
    off = len(MAGIC)
    if len(raw) < off + 32:
        raise FormatError(f"{path}: truncated header")
    version, L, D, H, D_cmp, E, head_kind, head_classes = struct.unpack(
        "<8I", raw[off:off + 32])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off += 32

    def take(n, shape):
        nonlocal off
        need = 8 * n
        if len(raw) < off + need:
            raise FormatError(f"{path}: truncated parameter payload")
        arr = np.frombuffer(raw[off:off + need], dtype="<f8").reshape(shape)
        off += need
        return arr.astype(np.float64)

    params = MHFAParams(
        w_k=take(L, (L,)), w_v=take(L, (L,)),
        W_k=take(D * D_cmp, (D, D_cmp)), W_v=take(D * D_cmp, (D, D_cmp)),
        W_att=take(D_cmp * H, (D_cmp, H)),
        W_out=take(H * D_cmp * E, (H * D_cmp, E)), b_out=take(E, (E,)),
    )
    if head_kind == HEAD_NONE:
        head = None
    elif head_kind == HEAD_CM:
        head = CMHead(w=take(E, (E,)), b=take(1, (1,)))
    elif head_kind == HEAD_ASV:
        head = AAMHead(weights=take(head_classes * E, (head_classes, E)))
    else:
        raise FormatError(f"{path}: unknown head kind {head_kind}")
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return params, head
