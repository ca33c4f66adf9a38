"""Single-file binary checkpoints: named float32 tensors + a JSON header.

Layout of a checkpoint file::

    bytes 0..8    magic  b"SGCK0001"
    bytes 8..16   header length (unsigned 64-bit little-endian)
    then          UTF-8 JSON header
    then          tensor payload, the blobs concatenated in header order

The header carries ``{"version", "config", "meta", "tensors"}`` where
``tensors`` is a list of ``{"name", "shape", "offset", "dtype"}`` entries and
``offset`` is relative to the payload start.  Every tensor is stored row-major
as little-endian float32 — the canonical training precision — so a save/load
round trip is bit-exact and the file stays language-portable.  Non-float
state (e.g. the uint8 ``fitted`` flags) survives because its values are small
integers representable exactly in float32.

On top of the raw format sit model bundles: the state dicts of a locator,
sketcher (+ critics) and/or house model under ``locator.`` / ``sketcher.`` /
``critics.`` / ``house.`` prefixes, their configs in the JSON header, and
optimizer moments as ordinary named tensors under ``opt.<name>.`` so a
resumed run continues bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .gat import GatConfig
from .house import HouseConfig, HouseModel
from .locator import LocatorConfig, PartLocator
from .sketcher import PartCritics, PartSketcher, SketcherConfig

MAGIC = b"SGCK0001"
_U64 = struct.Struct("<Q")
_DTYPE = "f4"


class CheckpointError(ValueError):
    """Malformed checkpoint file or a mismatch against the target model."""


# ---------------------------------------------------------------------------
# raw format


@dataclass
class Checkpoint:
    """Parsed checkpoint: flat name->tensor map plus the JSON header parts."""

    tensors: dict[str, torch.Tensor]
    config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, tensors: dict[str, torch.Tensor],
                    config: dict | None = None,
                    meta: dict | None = None) -> None:
    """Write name->tensor plus header dicts to `path` (see module docstring)."""
    index: list[dict] = []
    blobs: list[bytes] = []
    seen: set[str] = set()
    offset = 0
    for name, t in tensors.items():
        if not isinstance(name, str) or not name:
            raise CheckpointError("tensor names must be non-empty strings")
        if name in seen:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        seen.add(name)
        arr = np.ascontiguousarray(
            t.detach().to(torch.float32).cpu().numpy(), dtype="<f4")
        blob = arr.tobytes()
        index.append({"name": name, "shape": list(t.shape),
                      "offset": offset, "dtype": _DTYPE})
        offset += len(blob)
        blobs.append(blob)
    header = {"version": 1, "config": config or {}, "meta": meta or {},
              "tensors": index}
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_U64.pack(len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    """Parse a checkpoint file; raises CheckpointError on any malformation."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + _U64.size:
        raise CheckpointError("file too short for magic + header length")
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic {data[:len(MAGIC)]!r}")
    (header_len,) = _U64.unpack_from(data, len(MAGIC))
    body_start = len(MAGIC) + _U64.size
    payload_start = body_start + header_len
    if payload_start > len(data):
        raise CheckpointError("header length exceeds file size")
    try:
        header = json.loads(data[body_start:payload_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from exc
    payload = data[payload_start:]

    tensors: dict[str, torch.Tensor] = {}
    for entry in header.get("tensors", []):
        name, shape = entry["name"], entry["shape"]
        if entry.get("dtype", _DTYPE) != _DTYPE:
            raise CheckpointError(f"unsupported dtype for {name!r}")
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        numel = math.prod(shape)
        start = entry["offset"]
        end = start + 4 * numel
        if start < 0 or end > len(payload):
            raise CheckpointError(f"tensor {name!r} overruns the payload")
        arr = np.frombuffer(payload, dtype="<f4", count=numel,
                            offset=start).reshape(shape)
        tensors[name] = torch.from_numpy(arr.copy())
    return Checkpoint(tensors=tensors, config=header.get("config", {}),
                      meta=header.get("meta", {}))


# ---------------------------------------------------------------------------
# module state <-> flat tensor maps


def flat_state(module: torch.nn.Module, prefix: str) -> dict[str, torch.Tensor]:
    """State dict of `module` with every key prefixed."""
    return {prefix + k: v for k, v in module.state_dict().items()}


def load_module_state(module: torch.nn.Module,
                      tensors: dict[str, torch.Tensor], prefix: str) -> None:
    """Restore `module` from prefixed entries, casting to each target dtype."""
    restored = {}
    for key, target in module.state_dict().items():
        name = prefix + key
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        src = tensors[name]
        if tuple(src.shape) != tuple(target.shape):
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint "
                f"{tuple(src.shape)} vs model {tuple(target.shape)}")
        restored[key] = src.to(target.dtype)
    module.load_state_dict(restored)


def pack_optimizer(prefix: str, opt: torch.optim.Optimizer
                   ) -> tuple[dict[str, torch.Tensor], dict]:
    """Flatten optimizer state to named tensors + a JSON-safe spec."""
    sd = opt.state_dict()
    tensors: dict[str, torch.Tensor] = {}
    spec: dict = {"param_groups": sd["param_groups"], "state": {}}
    for idx, st in sd["state"].items():
        entry: dict = {"tensors": [], "scalars": {}}
        for key, val in st.items():
            if isinstance(val, torch.Tensor):
                tensors[f"{prefix}{idx}.{key}"] = val
                entry["tensors"].append(key)
            else:
                entry["scalars"][key] = val
        spec["state"][str(idx)] = entry
    return tensors, spec


def restore_optimizer(opt: torch.optim.Optimizer,
                      tensors: dict[str, torch.Tensor], prefix: str,
                      spec: dict) -> None:
    """Inverse of pack_optimizer onto a freshly constructed optimizer."""
    state = {}
    for idx_s, entry in spec["state"].items():
        st = dict(entry["scalars"])
        for key in entry["tensors"]:
            name = f"{prefix}{idx_s}.{key}"
            if name not in tensors:
                raise CheckpointError(f"checkpoint is missing tensor {name!r}")
            st[key] = tensors[name]
        state[int(idx_s)] = st
    groups = [dict(g, betas=tuple(g["betas"])) if "betas" in g else dict(g)
              for g in spec["param_groups"]]
    opt.load_state_dict({"state": state, "param_groups": groups})


# ---------------------------------------------------------------------------
# model bundles


def locator_config_from_dict(d: dict) -> LocatorConfig:
    d = dict(d)
    d["gat"] = GatConfig(**d["gat"])
    return LocatorConfig(**d)


def sketcher_config_from_dict(d: dict) -> SketcherConfig:
    d = dict(d)
    d["gat"] = GatConfig(**d["gat"])
    return SketcherConfig(**d)


def house_config_from_dict(d: dict) -> HouseConfig:
    d = dict(d)
    d["locator"] = locator_config_from_dict(d["locator"])
    return HouseConfig(**d)


@dataclass
class Bundle:
    """Models reconstructed from a checkpoint + the raw parsed contents."""

    locator: PartLocator | None
    sketcher: PartSketcher | None
    critics: PartCritics | None
    tensors: dict[str, torch.Tensor]
    config: dict
    meta: dict
    house: HouseModel | None = None

    def optimizer_spec(self, name: str) -> dict:
        specs = self.config.get("optimizers", {})
        if name not in specs:
            raise CheckpointError(f"no optimizer state saved under {name!r}")
        return specs[name]


def save_bundle(path, *, locator: PartLocator | None = None,
                sketcher: PartSketcher | None = None,
                critics: PartCritics | None = None,
                house: HouseModel | None = None,
                optimizers: dict[str, torch.optim.Optimizer] | None = None,
                meta: dict | None = None) -> None:
    """Write any subset of the pipeline's models into one checkpoint file."""
    if locator is None and sketcher is None and critics is None \
            and house is None:
        raise CheckpointError("bundle needs at least one model")
    tensors: dict[str, torch.Tensor] = {}
    config: dict = {}
    if locator is not None:
        tensors.update(flat_state(locator, "locator."))
        config["locator"] = dataclasses.asdict(locator.cfg)
    if sketcher is not None:
        tensors.update(flat_state(sketcher, "sketcher."))
        config["sketcher"] = dataclasses.asdict(sketcher.cfg)
    if critics is not None:
        if sketcher is None:
            raise CheckpointError("critics can only be bundled with a sketcher")
        tensors.update(flat_state(critics, "critics."))
    if house is not None:
        tensors.update(flat_state(house, "house."))
        config["house"] = dataclasses.asdict(house.cfg)
    opt_specs = {}
    for name, opt in (optimizers or {}).items():
        opt_tensors, spec = pack_optimizer(f"opt.{name}.", opt)
        tensors.update(opt_tensors)
        opt_specs[name] = spec
    if opt_specs:
        config["optimizers"] = opt_specs
    save_checkpoint(path, tensors, config=config, meta=meta)


def load_bundle(path) -> Bundle:
    """Rebuild the models a checkpoint carries (configs come from its header)."""
    ck = load_checkpoint(path)
    locator = sketcher = critics = None
    if "locator" in ck.config:
        locator = PartLocator(locator_config_from_dict(ck.config["locator"]))
        load_module_state(locator, ck.tensors, "locator.")
    if "sketcher" in ck.config:
        cfg = sketcher_config_from_dict(ck.config["sketcher"])
        sketcher = PartSketcher(cfg)
        load_module_state(sketcher, ck.tensors, "sketcher.")
        if any(k.startswith("critics.") for k in ck.tensors):
            critics = PartCritics(cfg)
            load_module_state(critics, ck.tensors, "critics.")
    house = None
    if "house" in ck.config:
        house = HouseModel(house_config_from_dict(ck.config["house"]))
        load_module_state(house, ck.tensors, "house.")
    return Bundle(locator=locator, sketcher=sketcher, critics=critics,
                  tensors=ck.tensors, config=ck.config, meta=ck.meta,
                  house=house)
