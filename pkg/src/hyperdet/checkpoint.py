"""Checkpoint directories.

Layout::

    manifest.json          schema, model/train config, seed, epoch, metrics, file hashes
    backbone.safetensors   frozen backbone tensors
    hypernet.safetensors   embedding tables, combiner, A/B heads
    head.safetensors       classification head
    optimizer.safetensors  optional optimizer moments (for resuming)
    kernels.txt            the filter bank used for the residual views

Every file is a pure function of its contents, so identical runs give
byte-identical directories.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch
from safetensors.torch import load_file, save_file

from .backbone import DetectorNet, ModelConfig
from .errors import CheckpointError
from .filterbank import FilterBank, default_bank, parse_kernels

SCHEMA = "hyperdet-checkpoint/1"
MANIFEST = "manifest.json"
GROUPS = ("backbone", "hypernet", "head")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _tensors(module) -> dict:
    return {n: t.detach().contiguous().clone() for n, t in module.state_dict().items()}


def _optimizer_tensors(model: DetectorNet, optimizer) -> dict:
    names = {id(p): n for n, p in model.trainable_parameters().items()}
    out = {}
    for p, st in optimizer.state.items():
        name = names.get(id(p))
        if name is None:
            continue
        for key, val in st.items():
            out[f"{name}::{key}"] = torch.as_tensor(val).detach().contiguous().clone()
    return out


def save_checkpoint(
    directory,
    model: DetectorNet,
    bank: FilterBank | None = None,
    *,
    train_config: dict | None = None,
    seed: int | None = None,
    epoch: int = 0,
    metrics: dict | None = None,
    optimizer=None,
) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    bank = bank if bank is not None else default_bank()
    files = {}
    for group in GROUPS:
        fname = f"{group}.safetensors"
        save_file(_tensors(getattr(model, group)), str(d / fname), metadata={"group": group})
        files[group] = fname
    if optimizer is not None and optimizer.state:
        save_file(_optimizer_tensors(model, optimizer), str(d / "optimizer.safetensors"),
                  metadata={"group": "optimizer"})
        files["optimizer"] = "optimizer.safetensors"
    (d / "kernels.txt").write_text(bank.to_text())
    files["kernels"] = "kernels.txt"
    cfg = {"model": model.cfg.to_dict(), "train": train_config or {}}
    manifest = {
        "schema": SCHEMA,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": seed if seed is not None else model.cfg.seed,
        "epoch": epoch,
        "metrics": metrics or {},
        "files": {k: {"name": v, "sha256": _sha256(d / v)} for k, v in sorted(files.items())},
    }
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise CheckpointError(f"no {MANIFEST} in {directory}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest {path}: {exc}") from None
    if manifest.get("schema") != SCHEMA:
        raise CheckpointError(f"unsupported checkpoint schema {manifest.get('schema')!r}")
    return manifest


def checkpoint_hash(directory) -> str:
    """Digest over the manifest and every file it lists."""
    d = Path(directory)
    h = hashlib.sha256((d / MANIFEST).read_bytes())
    for entry in sorted(read_manifest(d)["files"].values(), key=lambda e: e["name"]):
        h.update(entry["sha256"].encode())
    return h.hexdigest()


def load_checkpoint(directory, verify: bool = True):
    """Returns ``(model, bank, manifest)`` with the model in eval mode."""
    d = Path(directory)
    manifest = read_manifest(d)
    files = manifest["files"]
    if verify:
        for key, entry in files.items():
            p = d / entry["name"]
            if not p.is_file():
                raise CheckpointError(f"checkpoint file {p} missing")
            if _sha256(p) != entry["sha256"]:
                raise CheckpointError(f"checkpoint file {p} fails its sha256 check")
    cfg = ModelConfig.from_dict(manifest["config"]["model"])
    model = DetectorNet(cfg)
    for group in GROUPS:
        state = load_file(str(d / files[group]["name"]))
        getattr(model, group).load_state_dict(state, strict=True)
    bank = parse_kernels((d / files["kernels"]["name"]).read_text(), str(d / "kernels.txt"))
    model.eval()
    return model, bank, manifest


def load_optimizer_state(directory, model: DetectorNet, optimizer) -> bool:
    entry = read_manifest(directory)["files"].get("optimizer")
    if entry is None:
        return False
    tensors = load_file(str(Path(directory) / entry["name"]))
    params = model.trainable_parameters()
    for key, val in tensors.items():
        name, field = key.split("::", 1)
        if name not in params:
            raise CheckpointError(f"optimizer state for unknown parameter {name}")
        optimizer.state[params[name]][field] = val
    return True
