"""Self-describing checkpoint files.

Layout: 4-byte magic, u32 version, u64 header length, UTF-8 JSON header, then
the raw parameter data as little-endian float64 in header order. The header
carries the network configuration plus arbitrary JSON training metadata, so a
checkpoint alone is enough to rebuild the model.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import torch

from .model import FourHeadNet, NetConfig

MAGIC = b"BMCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    net_config: NetConfig
    params: dict[str, np.ndarray]           # float64 arrays
    metadata: dict[str, Any] = field(default_factory=dict)

    def build_model(self) -> FourHeadNet:
        model = FourHeadNet(self.net_config)
        tensors = {k: torch.as_tensor(v, dtype=self.net_config.torch_dtype)
                   for k, v in self.params.items()}
        model.load_state_dict(tensors)
        return model


def checkpoint_from_model(model: FourHeadNet, metadata: dict | None = None) -> Checkpoint:
    params = {name: tensor.detach().cpu().double().numpy().copy()
              for name, tensor in model.state_dict().items()}
    return Checkpoint(net_config=model.config, params=params,
                      metadata=dict(metadata or {}))


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    header = {
        "net_config": dataclasses.asdict(checkpoint.net_config),
        "metadata": checkpoint.metadata,
        "tensors": [{"name": k, "shape": list(v.shape)}
                    for k, v in checkpoint.params.items()],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(blob)))
        f.write(blob)
        for v in checkpoint.params.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        version, header_len = struct.unpack("<IQ", f.read(12))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(f.read(header_len).decode("utf-8"))
        cfg_dict = dict(header["net_config"])
        cfg_dict["dims"] = tuple(cfg_dict["dims"])
        net_config = NetConfig(**cfg_dict)
        params = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape)
            params[entry["name"]] = data.copy()
    return Checkpoint(net_config=net_config, params=params,
                      metadata=header.get("metadata", {}))
