"""Binary checkpoint files.

Layout (all integers little-endian int64, all reals little-endian float64)::

    b"CHOPPY1"
    n, d, h, n_layers, flags           # flags bit 0: standardize_scores
    count                              # number of parameter arrays
    repeat count times, in param_names(config) order:
        ndim, dim_1 .. dim_ndim
        prod(dims) reals, row-major
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO

import numpy as np

from .model import ModelConfig, ModelParams, check_params, param_names
from .tensor import Tensor

MAGIC = b"CHOPPY1"
FLAG_STANDARDIZE = 1


class CheckpointError(ValueError):
    pass


def _flags(config: ModelConfig) -> int:
    return FLAG_STANDARDIZE if config.standardize_scores else 0


def dump(config: ModelConfig, params: ModelParams, fh: BinaryIO) -> None:
    check_params(config, params)
    names = param_names(config)
    fh.write(MAGIC)
    fh.write(struct.pack("<5q", config.n, config.d, config.h, config.n_layers, _flags(config)))
    fh.write(struct.pack("<q", len(names)))
    for name in names:
        arr = params[name].data
        fh.write(struct.pack(f"<{1 + arr.ndim}q", arr.ndim, *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def dumps(config: ModelConfig, params: ModelParams) -> bytes:
    buf = io.BytesIO()
    dump(config, params, buf)
    return buf.getvalue()


def save(path: str, config: ModelConfig, params: ModelParams) -> None:
    with open(path, "wb") as fh:
        dump(config, params, fh)


def _read(fh: BinaryIO, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise CheckpointError("checkpoint is truncated")
    return data


def load_from(fh: BinaryIO, seed: int = 0) -> tuple[ModelConfig, ModelParams]:
    if _read(fh, len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    n, d, h, n_layers, flags = struct.unpack("<5q", _read(fh, 40))
    try:
        config = ModelConfig(n=n, d=d, h=h, n_layers=n_layers, seed=seed,
                             standardize_scores=bool(flags & FLAG_STANDARDIZE))
    except ValueError as exc:
        raise CheckpointError(f"invalid model header: {exc}") from exc
    names = param_names(config)
    (count,) = struct.unpack("<q", _read(fh, 8))
    if count != len(names):
        raise CheckpointError(f"expected {len(names)} arrays, header says {count}")
    params = {}
    for name in names:
        (ndim,) = struct.unpack("<q", _read(fh, 8))
        if not 1 <= ndim <= 2:
            raise CheckpointError(f"{name}: bad rank {ndim}")
        shape = struct.unpack(f"<{ndim}q", _read(fh, 8 * ndim))
        size = int(np.prod(shape))
        arr = np.frombuffer(_read(fh, 8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    if fh.read(1):
        raise CheckpointError("trailing bytes after last array")
    try:
        check_params(config, params)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return config, params


def loads(data: bytes) -> tuple[ModelConfig, ModelParams]:
    return load_from(io.BytesIO(data))


def load(path: str) -> tuple[ModelConfig, ModelParams]:
    with open(path, "rb") as fh:
        return load_from(fh)
