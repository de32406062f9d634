"""
Checkpoint container.

Layout (little-endian):
    magic (8 bytes) | version u32
    config length u32 | EngineConfig as UTF-8 JSON
    tensor count u32
    per tensor: name length u16 | name | ndim u8 | dims u32 x ndim | float32 payload
"""

import logging
from pathlib import Path
from typing import Union

import numpy as np
import torch

from .binio import BinaryReader, f32_bytes, pack, write_file
from .config import EngineConfig
from .constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .errors import FormatError
from .params import HybridQuantModel

logger = logging.getLogger(__name__)

# Integer bookkeeping buffers that are not part of the container.
_SKIPPED_SUFFIXES = ("num_batches_tracked",)


def _float_state(model: HybridQuantModel) -> dict[str, torch.Tensor]:
    return {
        name: tensor
        for name, tensor in model.state_dict().items()
        if not name.endswith(_SKIPPED_SUFFIXES)
    }


def checkpoint_bytes(model: HybridQuantModel) -> bytes:
    """Serialize config and all float tensors of the model."""
    config_json = model.config.to_json().encode("utf-8")
    parts = [CHECKPOINT_MAGIC, pack("I", CHECKPOINT_VERSION), pack("I", len(config_json)), config_json]
    state = _float_state(model)
    parts.append(pack("I", len(state)))
    for name, tensor in state.items():
        encoded = name.encode("utf-8")
        array = tensor.detach().cpu().numpy()
        parts.append(pack("H", len(encoded)) + encoded)
        parts.append(pack("B", array.ndim) + pack(f"{array.ndim}I", *array.shape))
        parts.append(f32_bytes(array))
    return b"".join(parts)


def write_checkpoint(model: HybridQuantModel, path: Union[str, Path]) -> None:
    write_file(path, checkpoint_bytes(model))
    logger.info(f"Wrote checkpoint {path}")


def read_checkpoint(path: Union[str, Path]) -> HybridQuantModel:
    """
    Rebuild a model from a checkpoint file.

    Raises:
        FormatError: On bad magic/version, truncation, or tensors that do not
            match the architecture implied by the stored config.
    """
    reader = BinaryReader.open(path)
    reader.expect_magic(CHECKPOINT_MAGIC, "checkpoint")
    reader.expect_version(CHECKPOINT_VERSION, "checkpoint")
    config_json = reader.read(reader.u32()).decode("utf-8")
    try:
        config = EngineConfig.from_json(config_json).validate()
    except Exception as e:
        raise FormatError(str(path), f"invalid stored config: {e}") from e

    model = HybridQuantModel(config)
    expected = _float_state(model)
    loaded: dict[str, torch.Tensor] = {}
    for _ in range(reader.u32()):
        name = reader.read(reader.u16()).decode("utf-8")
        ndim = reader.u8()
        shape = reader.unpack(f"{ndim}I")
        array = reader.array("<f4", int(np.prod(shape, dtype=np.int64))).reshape(shape)
        if name not in expected:
            raise FormatError(str(path), f"unexpected tensor {name!r}")
        if tuple(expected[name].shape) != tuple(shape):
            raise FormatError(
                str(path), f"tensor {name!r} has shape {tuple(shape)}, "
                f"expected {tuple(expected[name].shape)}"
            )
        loaded[name] = torch.from_numpy(array)
    reader.expect_end()

    missing = sorted(set(expected) - set(loaded))
    if missing:
        raise FormatError(str(path), f"missing tensors: {', '.join(missing)}")
    model.load_state_dict(loaded, strict=False)
    model.eval()
    logger.debug(f"Loaded checkpoint {path} ({len(loaded)} tensors)")
    return model
