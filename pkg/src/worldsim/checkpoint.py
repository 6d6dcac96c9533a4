"""Single-file checkpoint container.

Layout: magic, format version, a JSON header (module kind, config hash,
step, creation seed, module constants), then named arrays in the tensorio
dtype encoding. Loading verifies kind and config hash; a hash mismatch is
refused unless forced.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"WSCK"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("float32"): 0,
    np.dtype("int32"): 1,
    np.dtype("uint8"): 2,
    np.dtype("int64"): 3,
    np.dtype("float64"): 4,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


class CheckpointError(ValueError):
    """Raised on malformed, mismatched, or refused checkpoints."""


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path: str | Path, kind: str, header: dict,
                    arrays: dict[str, np.ndarray]) -> None:
    full_header = dict(header)
    full_header["kind"] = kind
    full_header["format_version"] = VERSION
    header_blob = json.dumps(full_header, sort_keys=True).encode()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_blob)))
        fh.write(header_blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            if arr.dtype not in _DTYPE_CODES:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for array {name!r}")
            name_bytes = name.encode()
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<II", _DTYPE_CODES[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())
    tmp.replace(path)


def load_checkpoint(path: str | Path, expected_kind: str | None = None,
                    expected_config_hash: str | None = None,
                    force: bool = False) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with open(path, "rb") as fh:
        def read_exact(n: int) -> bytes:
            data = fh.read(n)
            if len(data) != n:
                raise CheckpointError(f"{path}: truncated checkpoint")
            return data

        if read_exact(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", read_exact(4))
        if version != VERSION:
            raise CheckpointError(
                f"{path}: format version {version} unsupported (expected {VERSION})"
            )
        (header_len,) = struct.unpack("<Q", read_exact(8))
        try:
            header = json.loads(read_exact(header_len))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
        (count,) = struct.unpack("<I", read_exact(4))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", read_exact(4))
            name = read_exact(name_len).decode()
            dtype_code, rank = struct.unpack("<II", read_exact(8))
            if dtype_code not in _CODE_DTYPES:
                raise CheckpointError(f"{path}: unknown dtype code {dtype_code}")
            shape = struct.unpack(f"<{rank}Q", read_exact(8 * rank)) if rank else ()
            dtype = _CODE_DTYPES[dtype_code]
            n_bytes = int(np.prod(shape)) * dtype.itemsize if rank else dtype.itemsize
            data = read_exact(n_bytes)
            arrays[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()

    if expected_kind is not None and header.get("kind") != expected_kind:
        raise CheckpointError(
            f"{path}: checkpoint kind {header.get('kind')!r} does not match "
            f"expected {expected_kind!r}"
        )
    if expected_config_hash is not None and header.get("config_hash") != expected_config_hash:
        if not force:
            raise CheckpointError(
                f"{path}: config hash {header.get('config_hash')} does not match "
                f"{expected_config_hash}; pass force=True to load anyway"
            )
    return header, arrays


def state_to_arrays(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def arrays_to_state(arrays: dict[str, np.ndarray], prefix: str = "") -> dict[str, torch.Tensor]:
    out = {}
    for key, value in arrays.items():
        if key.startswith(prefix):
            out[key[len(prefix):]] = torch.from_numpy(np.ascontiguousarray(value))
    return out
