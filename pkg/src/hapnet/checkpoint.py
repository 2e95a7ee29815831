"""Single-file checkpoint archive.

Layout: an 8-byte magic, a little-endian uint64 header length, a
canonical JSON header (sorted keys, no whitespace) describing each array
and carrying free-form metadata, then the raw array bytes back to back.
Array names are sorted and dtypes stored little-endian, so writing the
same content always produces the same bytes.
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"HAPNETA1"


def save_archive(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.ndim:
            arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"arrays": entries, "meta": meta}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint archive")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    data = raw[16 + header_len :]
    arrays = {}
    for entry in header["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(data[start : start + nbytes], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, header["meta"]


def pack_model(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def unpack_model(model: torch.nn.Module, arrays: dict[str, np.ndarray]) -> None:
    state = {}
    for key, arr in arrays.items():
        if key.startswith("param/"):
            state[key[len("param/") :]] = torch.from_numpy(arr.copy())
    missing = model.load_state_dict(state, strict=True)
    assert not missing.missing_keys and not missing.unexpected_keys


def load_model(path):
    """Rebuild a HapNet in eval mode from an archive's config and weights."""
    from .config import ModelConfig
    from .model import HapNet

    arrays, meta = load_archive(path)
    cfg = ModelConfig.from_dict(meta["config"])
    model = HapNet(cfg)
    unpack_model(model, arrays)
    model.eval()
    return model, meta


def pack_optimizer(optimizer: torch.optim.Optimizer, model: torch.nn.Module) -> dict[str, np.ndarray]:
    """Adam moments and step counters keyed by parameter name."""
    name_of = {id(p): n for n, p in model.named_parameters()}
    out = {}
    for group in optimizer.param_groups:
        for p in group["params"]:
            state = optimizer.state.get(p)
            if not state:
                continue
            name = name_of[id(p)]
            for field in ("exp_avg", "exp_avg_sq"):
                out[f"opt/{name}/{field}"] = state[field].detach().cpu().numpy()
            step = state["step"]
            step = step.detach().cpu().numpy() if torch.is_tensor(step) else np.asarray(step)
            out[f"opt/{name}/step"] = step
    return out


def unpack_optimizer(
    optimizer: torch.optim.Optimizer, model: torch.nn.Module, arrays: dict[str, np.ndarray]
) -> None:
    params = dict(model.named_parameters())
    for name, p in params.items():
        key = f"opt/{name}/exp_avg"
        if key not in arrays:
            continue
        step = arrays[f"opt/{name}/step"]
        optimizer.state[p] = {
            "step": torch.from_numpy(step.copy()).reshape(()),
            "exp_avg": torch.from_numpy(arrays[key].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"opt/{name}/exp_avg_sq"].copy()),
        }
