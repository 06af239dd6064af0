"""Binary checkpoints: a canonical JSON header followed by little-endian float64 blobs.

Layout::

    b"NCXCKPT\\0" | uint64 header length | header JSON | raw float64 data

The header holds the format version, experiment config, schedule snapshot,
architecture, Adam hyperparameters, the train step and a shape table giving
each tensor's name, shape and offset into the data block.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..denoiser import ConditionalDenoiser
from ..errors import ConfigError
from ..numerics import AdamState
from ..schedule import NoiseSchedule
from ..training import TrainState

MAGIC = b"NCXCKPT\0"
FORMAT_VERSION = 1
_LE = np.dtype("<f8")


@dataclass
class Checkpoint:
    state: TrainState
    config: dict
    schedule: NoiseSchedule | None = None
    format_version: int = FORMAT_VERSION


def _tensors(state: TrainState):
    net, opt = state.net, state.opt
    for k in net.params:
        yield f"param/{k}", net.params[k]
    for k in net.params:
        yield f"adam_m/{k}", opt.m[k]
    for k in net.params:
        yield f"adam_v/{k}", opt.v[k]


def dumps(ckpt: Checkpoint) -> bytes:
    st = ckpt.state
    table, blobs, offset = [], [], 0
    for name, arr in _tensors(st):
        arr = np.ascontiguousarray(arr, dtype=_LE)
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.size
    header = {
        "format_version": ckpt.format_version,
        "config": ckpt.config,
        "schedule": None if ckpt.schedule is None else ckpt.schedule.to_dict(),
        "arch": {
            "arch": st.net.arch,
            "data_dim": st.net.data_dim,
            "hidden_dims": list(st.net.hidden_dims),
            "time_embed_dim": st.net.time_embed_dim,
        },
        "optimizer": {
            "lr": st.opt.lr, "beta1": st.opt.beta1, "beta2": st.opt.beta2,
            "eps": st.opt.eps, "step": st.opt.step,
        },
        "train_step": st.step,
        "tensors": table,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(blobs)


def loads(data: bytes) -> Checkpoint:
    if data[: len(MAGIC)] != MAGIC:
        raise ConfigError("not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[len(MAGIC): len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(data[start: start + hlen])
    if header["format_version"] != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {header['format_version']}")
    body = data[start + hlen:]
    if len(body) % _LE.itemsize:
        raise ConfigError("checkpoint data block is truncated")
    flat = np.frombuffer(body, dtype=_LE)
    a = header["arch"]
    net = ConditionalDenoiser(a["arch"], a["data_dim"], list(a["hidden_dims"]), a["time_embed_dim"])
    expected = net.param_shapes()
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        kind, key = entry["name"].split("/", 1)
        shape = tuple(entry["shape"])
        if expected.get(key) != shape:
            raise ConfigError(f"tensor {entry['name']} has shape {shape}, arch expects {expected.get(key)}")
        n = int(np.prod(shape))
        if entry["offset"] + n > flat.size:
            raise ConfigError(f"tensor {entry['name']} runs past the end of the data block")
        groups[kind][key] = flat[entry["offset"]: entry["offset"] + n].astype(np.float64).reshape(shape)
    if set(groups["param"]) != set(expected):
        raise ConfigError("checkpoint parameter set does not match the architecture")
    net.params = groups["param"]
    o = header["optimizer"]
    opt = AdamState(o["lr"], o["beta1"], o["beta2"], o["eps"], o["step"], groups["adam_m"], groups["adam_v"])
    sched = None if header["schedule"] is None else NoiseSchedule.from_dict(header["schedule"])
    return Checkpoint(TrainState(net, opt, header["train_step"]), header["config"], sched, header["format_version"])


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes())
