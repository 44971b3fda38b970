import logging
import struct
from pathlib import Path

import numpy

from config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION

from .errors import CheckpointError
from .layers import ParamSet

logger = logging.getLogger("cadiff.checkpoint")

_HEADER = struct.Struct("<4sII")


def encode_params(params: ParamSet) -> bytes:
    """
    Serializes a ParamSet: header (magic, version, count), then per parameter
    the name, rank, dims and the little-endian f64 payload.
    """
    chunks = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(params))]
    for full_name, param in params.params.items():
        name_bytes = full_name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<B", param.data.ndim))
        chunks.append(struct.pack(f"<{param.data.ndim}I", *param.data.shape))
        chunks.append(param.data.astype("<f8").tobytes())
    return b"".join(chunks)


def decode_params(payload: bytes) -> dict[str, numpy.ndarray]:
    if len(payload) < _HEADER.size:
        raise CheckpointError("checkpoint shorter than its header")
    magic, version, n_params = _HEADER.unpack_from(payload, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    offset = _HEADER.size
    arrays: dict[str, numpy.ndarray] = {}
    try:
        for _ in range(n_params):
            (name_length,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset : offset + name_length].decode("utf-8")
            offset += name_length
            (rank,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", payload, offset)
            offset += 4 * rank
            size = int(numpy.prod(dims, dtype=numpy.int64))
            data = numpy.frombuffer(payload, dtype="<f8", count=size, offset=offset)
            offset += 8 * size
            arrays[name] = data.astype(numpy.float64).reshape(dims)
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"truncated checkpoint after {len(arrays)} parameters") from e
    return arrays


def save_params(params: ParamSet, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_params(params))
    logger.debug("saved %s (%d tensors) to %s", params.name, len(params), path)


def load_params_into(params: ParamSet, path: Path) -> ParamSet:
    """
    Loads a checkpoint file into an already constructed ParamSet.

    Raises:
        CheckpointError: if names or shapes disagree with the ParamSet.
    """
    with open(path, "rb") as f:
        arrays = decode_params(f.read())
    if set(arrays) != set(params.params):
        missing = sorted(set(params.params) - set(arrays))
        extra = sorted(set(arrays) - set(params.params))
        raise CheckpointError(f"{path}: missing {missing}, unexpected {extra}")
    for full_name, param in params.params.items():
        if arrays[full_name].shape != param.shape:
            raise CheckpointError(
                f"{path}: {full_name} has shape {arrays[full_name].shape},"
                + f" expected {param.shape}"
            )
        param.data = arrays[full_name]
    return params
