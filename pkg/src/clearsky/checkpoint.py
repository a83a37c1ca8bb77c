"""Portable checkpoint container.

Layout: a magic prefix, one line of JSON (kind, config, version_tag, ordered
parameter names/shapes/dtype), a newline, then raw little-endian float32
parameter payloads in header order.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .backbone import BackboneConfig, RestorationModel, build_model
from .errors import CorruptCheckpointError
from .projector import PrincipalProjector, ProjectorConfig, build_projector

MAGIC = b"CLEARSKY1 "


def param_hash(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def _write(path: Path, kind: str, config: dict, version_tag: int,
           named_params: list) -> None:
    header = {
        "kind": kind,
        "config": config,
        "version_tag": version_tag,
        "params": [
            {"name": n, "shape": list(p.shape), "dtype": "float32"}
            for n, p in named_params
        ],
    }
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode())
        f.write(b"\n")
        for _, p in named_params:
            arr = p.detach().cpu().numpy().astype("<f4")
            f.write(arr.tobytes())


def _read(path: Path) -> tuple:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CorruptCheckpointError(f"{path}: bad magic")
    nl = data.find(b"\n", len(MAGIC))
    if nl < 0:
        raise CorruptCheckpointError(f"{path}: missing header terminator")
    try:
        header = json.loads(data[len(MAGIC):nl].decode())
    except json.JSONDecodeError as e:
        raise CorruptCheckpointError(f"{path}: malformed header: {e}") from e
    payload = data[nl + 1:]
    expected = sum(int(np.prod(p["shape"])) for p in header["params"]) * 4
    if len(payload) != expected:
        raise CorruptCheckpointError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    arrays = {}
    offset = 0
    for p in header["params"]:
        count = int(np.prod(p["shape"]))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        arrays[p["name"]] = arr.reshape(p["shape"]).copy()
        offset += count * 4
    return header, arrays


def _load_into(module: torch.nn.Module, header: dict, arrays: dict) -> None:
    dtype = next(module.parameters()).dtype
    state = {n: torch.from_numpy(a).to(dtype) for n, a in arrays.items()}
    try:
        missing, unexpected = module.load_state_dict(state, strict=False)
    except RuntimeError as e:
        raise CorruptCheckpointError(f"header/payload mismatch with model: {e}") from e
    buffers = {n for n, _ in module.named_buffers()}
    if unexpected or any(m not in buffers for m in missing):
        raise CorruptCheckpointError(
            f"header/payload mismatch with model: missing {missing}, unexpected {unexpected}"
        )


def save_backbone(model: RestorationModel, path: Path | str) -> None:
    _write(Path(path), "backbone", model.config.to_dict(), model.version_tag,
           list(model.named_parameters()))


def load_backbone(path: Path | str, dtype: torch.dtype = torch.float32) -> RestorationModel:
    header, arrays = _read(Path(path))
    if header.get("kind") != "backbone":
        raise CorruptCheckpointError(f"{path}: kind {header.get('kind')!r}, expected backbone")
    model = build_model(BackboneConfig(**header["config"]), seed=0, dtype=dtype)
    _load_into(model, header, arrays)
    model.version_tag = header["version_tag"]
    return model


def save_projector(proj: PrincipalProjector, path: Path | str, version_tag: int = 0) -> None:
    _write(Path(path), "projector", proj.config.to_dict(), version_tag,
           list(proj.named_parameters()))


def load_projector(path: Path | str, dtype: torch.dtype = torch.float32) -> PrincipalProjector:
    header, arrays = _read(Path(path))
    if header.get("kind") != "projector":
        raise CorruptCheckpointError(f"{path}: kind {header.get('kind')!r}, expected projector")
    proj = build_projector(ProjectorConfig(**header["config"]), seed=0, dtype=dtype)
    _load_into(proj, header, arrays)
    return proj.freeze()


def read_header(path: Path | str) -> dict:
    header, _ = _read(Path(path))
    return header
