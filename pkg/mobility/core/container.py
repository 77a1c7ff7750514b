"""
Versioned binary container shared by checkpoints and exported backbones.

Layout (little-endian):
    magic      4 bytes (b'RHYK')
    version    u16
    header_len u64
    header     UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "shape", "offset"}]}
    payload    float64 blobs in header order
"""

from pathlib import Path
from typing import Any, Dict, Tuple
import hashlib
import json
import struct

import numpy as np

from mobility.errors import CheckpointFormatError

MAGIC = b'RHYK'
VERSION = 1
_PREFIX = struct.Struct('<4sHQ')


def write_container(path: str | Path, meta: Dict[str, Any], tensors: Dict[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    index = []
    offset = 0
    blobs = []
    for name in sorted(tensors):
        blob = np.ascontiguousarray(tensors[name], dtype='<f8').tobytes()
        index.append({'name': name, 'shape': list(np.shape(tensors[name])), 'offset': offset})
        offset += len(blob)
        blobs.append(blob)

    header = json.dumps({'meta': meta, 'tensors': index}, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def read_container(path: str | Path) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointFormatError(f"{path}: truncated header")
    magic, version, header_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")

    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: unreadable header: {e}")

    payload = start + header_len
    tensors = {}
    for entry in header['tensors']:
        count = int(np.prod(entry['shape'])) if entry['shape'] else 1
        begin = payload + entry['offset']
        end = begin + 8 * count
        if end > len(data):
            raise CheckpointFormatError(f"{path}: tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(data[begin:end], dtype='<f8').astype(np.float64)
        tensors[entry['name']] = arr.reshape(entry['shape'])
    return header['meta'], tensors


def tensor_checksum(tensors: Dict[str, np.ndarray]) -> str:
    """SHA-256 over names, shapes and float64 bytes in name order"""
    h = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype='<f8')
        h.update(name.encode('utf-8'))
        h.update(str(arr.shape).encode('ascii'))
        h.update(arr.tobytes())
    return h.hexdigest()
