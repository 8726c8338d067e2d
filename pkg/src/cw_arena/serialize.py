"""Parameter snapshots and agent checkpoints.

Binary layout (all integers little-endian)::

    magic       4 bytes  b"CWNN"
    version     u32      1
    header_len  u32      length of the UTF-8 JSON header that follows
    header      bytes    JSON object ({} for bare parameter files)
    n_arrays    u32
    per array, in layer order then key order (w, b, sw, sb):
        name_len u16, name (UTF-8, "<layer>.<key>")
        ndim     u8,  dims u32 * ndim
        data     float64 little-endian, row-major
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .errors import InvalidParameter

MAGIC = b"CWNN"
VERSION = 1


def write_params(fh, params, header=None):
    head = json.dumps(header or {}, sort_keys=True).encode()
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, len(head)))
    fh.write(head)
    arrays = [(f"{i}.{k}", v) for i, p in enumerate(params) for k, v in p.items()]
    fh.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        raw = name.encode()
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise InvalidParameter("truncated CWNN file")
    return data


def read_params(fh):
    if fh.read(4) != MAGIC:
        raise InvalidParameter("not a CWNN parameter file")
    version, head_len = struct.unpack("<II", _read(fh, 8))
    if version != VERSION:
        raise InvalidParameter(f"unsupported CWNN version {version}")
    header = json.loads(_read(fh, head_len).decode())
    (n,) = struct.unpack("<I", _read(fh, 4))
    params = []
    for _ in range(n):
        (name_len,) = struct.unpack("<H", _read(fh, 2))
        layer, key = _read(fh, name_len).decode().split(".")
        (ndim,) = struct.unpack("<B", _read(fh, 1))
        shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(_read(fh, 8 * count), dtype="<f8").reshape(shape).astype(float)
        while len(params) <= int(layer):
            params.append({})
        params[int(layer)][key] = data
    return params, header


def params_to_bytes(params, header=None):
    buf = io.BytesIO()
    write_params(buf, params, header)
    return buf.getvalue()


def params_from_bytes(data):
    return read_params(io.BytesIO(data))


def save_checkpoint(path, agent):
    with open(path, "wb") as fh:
        write_params(fh, agent.online, {"kind": "rainbow-checkpoint", "agent_config": agent.cfg.to_dict()})


def load_checkpoint(path, seed=0):
    from .rainbow import AgentConfig, RainbowAgent

    with open(path, "rb") as fh:
        params, header = read_params(fh)
    if header.get("kind") != "rainbow-checkpoint":
        raise InvalidParameter(f"{path} is not an agent checkpoint")
    return RainbowAgent(AgentConfig.from_dict(header["agent_config"]), seed=seed, params=params)
