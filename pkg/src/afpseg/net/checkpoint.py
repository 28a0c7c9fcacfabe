"""Binary checkpoint container for network parameters.

Layout (all integers little-endian):

    magic  b"AFPW"
    u16    format version (currently 1)
    u16    endianness tag, 0x0001 written on little-endian
    u32    length of the UTF-8 JSON network config that follows
    ...    then per parameter, in network order:
    u16    name length, followed by the UTF-8 name
    u8     rank
    u32[]  one extent per axis
    f32[]  raw little-endian values

Readers reject unknown magics and versions outright rather than
guessing at the payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import FileFormatError
from .model import Network, NetworkConfig

__all__ = ["save_checkpoint", "load_checkpoint", "CHECKPOINT_MAGIC", "CHECKPOINT_VERSION"]

CHECKPOINT_MAGIC = b"AFPW"
CHECKPOINT_VERSION = 1
_ENDIAN_TAG = 0x0001


def save_checkpoint(path, net: Network) -> None:
    """Serialize config and parameters; values are stored as float32."""
    config_blob = json.dumps(net.config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHH", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, _ENDIAN_TAG))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        for name, param in net.params.items():
            name_blob = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_blob)))
            fh.write(name_blob)
            fh.write(struct.pack("<B", param.ndim))
            fh.write(struct.pack(f"<{param.ndim}I", *param.shape))
            fh.write(np.ascontiguousarray(param, dtype="<f4").tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    blob = fh.read(count)
    if len(blob) != count:
        raise FileFormatError(f"checkpoint truncated while reading {what}")
    return blob


def load_checkpoint(path, dtype=np.float32) -> Network:
    """Rebuild a network from a checkpoint written by save_checkpoint."""
    with open(path, "rb") as fh:
        magic, version, endian = struct.unpack("<4sHH", _read_exact(fh, 8, "header"))
        if magic != CHECKPOINT_MAGIC:
            raise FileFormatError(f"not a checkpoint file (magic {magic!r})")
        if version != CHECKPOINT_VERSION:
            raise FileFormatError(f"unsupported checkpoint version {version}")
        if endian != _ENDIAN_TAG:
            raise FileFormatError(f"unsupported endianness tag 0x{endian:04x}")
        (config_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        try:
            config = NetworkConfig.from_dict(
                json.loads(_read_exact(fh, config_len, "config").decode("utf-8"))
            )
        except (ValueError, TypeError) as exc:
            raise FileFormatError(f"bad checkpoint config: {exc}") from exc

        params: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(2)
            if not head:
                break
            if len(head) != 2:
                raise FileFormatError("checkpoint truncated while reading a name length")
            (name_len,) = struct.unpack("<H", head)
            name = _read_exact(fh, name_len, "parameter name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "extents"))
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            blob = _read_exact(fh, 4 * count, f"data of {name}")
            params[name] = (
                np.frombuffer(blob, dtype="<f4").reshape(shape).astype(dtype)
            )

    expected = Network(config, dtype=dtype)
    if set(params) != set(expected.params):
        missing = sorted(set(expected.params) - set(params))
        extra = sorted(set(params) - set(expected.params))
        raise FileFormatError(
            f"checkpoint parameters do not match the config "
            f"(missing {missing}, unexpected {extra})"
        )
    for name, arr in params.items():
        if arr.shape != expected.params[name].shape:
            raise FileFormatError(
                f"parameter {name} has shape {arr.shape}, "
                f"config implies {expected.params[name].shape}"
            )
    # Preserve canonical parameter order regardless of file order.
    ordered = {name: params[name] for name in expected.params}
    return Network(config, dtype=dtype, params=ordered)
