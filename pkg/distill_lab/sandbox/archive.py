"""
Array archive helpers

Every persisted sandbox object (datasets, matrices, checkpoints, label caches)
is a numpy .npz archive holding named arrays plus a JSON header. Identity is
a content digest over the arrays and header, so reruns that produce the same
content produce the same digest regardless of zip timestamps.
"""

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

HEADER_KEY = "__header__"


def content_digest(arrays: Dict[str, np.ndarray], header: Dict[str, Any]) -> str:
    """SHA-256 over header JSON and each array's name, dtype, shape and bytes"""
    digest = hashlib.sha256()
    digest.update(json.dumps(header, sort_keys=True).encode())
    for name in sorted(arrays):
        array = np.ascontiguousarray(arrays[name])
        digest.update(name.encode())
        digest.update(array.dtype.str.encode())
        digest.update(repr(array.shape).encode())
        digest.update(array.tobytes())
    return digest.hexdigest()


def write_archive(path: Union[str, Path], arrays: Dict[str, np.ndarray], header: Dict[str, Any]) -> str:
    """Write arrays + header atomically and return the content digest"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {name: np.asarray(value) for name, value in arrays.items()}
    payload[HEADER_KEY] = np.array(json.dumps(header, sort_keys=True))

    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            np.savez(f, **payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise

    return content_digest(arrays, header)


def read_archive(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read an archive written by write_archive"""
    with np.load(Path(path), allow_pickle=False) as data:
        arrays = {name: data[name] for name in data.files if name != HEADER_KEY}
        header = json.loads(str(data[HEADER_KEY])) if HEADER_KEY in data.files else {}
    return arrays, header
