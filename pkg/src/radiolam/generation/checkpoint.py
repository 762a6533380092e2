"""MoE checkpoints: one RMT tensor per parameter plus a JSON header."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from ..rmt import read_rmt, write_rmt
from .diffusion import make_schedule
from .moe import ExpertParams, MoEParams, RouterParams
from .networks import Denoiser, Router, architecture, architecture_hash

HEADER = "checkpoint.json"


def _dump_state(module: torch.nn.Module, root: Path, prefix: str) -> dict:
    files = {}
    for name, tensor in module.state_dict().items():
        fname = f"{prefix}.{name}.rmt"
        write_rmt(root / fname, tensor.detach().cpu().numpy())
        files[name] = fname
    return files


def _load_state(module: torch.nn.Module, root: Path, files: dict) -> None:
    state = {}
    for name, ref in module.state_dict().items():
        if name not in files:
            raise ValueError(f"checkpoint lacks tensor {name}")
        arr = read_rmt(root / files[name], expect_shape=tuple(ref.shape))
        state[name] = torch.from_numpy(np.array(arr))
    module.load_state_dict(state)
    module.eval()


def save_moe(moe: MoEParams, path: str | Path) -> Path:
    root = Path(path)
    (root / "tensors").mkdir(parents=True, exist_ok=True)
    experts = []
    for i, e in enumerate([moe.shared, *moe.domain_experts]):
        prefix = "tensors/shared" if i == 0 else f"tensors/expert{i - 1}"
        experts.append({"id": e.expert_id, "domain": e.domain, "files": _dump_state(e.net, root, prefix)})
    header = {
        "format": "radiolam-moe",
        "version": 1,
        "arch_hash": moe.arch_hash,
        "architecture": architecture(len(moe.domain_experts)),
        "schedule": moe.schedule.to_dict(),
        "E": len(moe.domain_experts),
        "g": moe.guidance_scale,
        "labels": list(moe.router.labels),
        "shared": experts[0],
        "domain_experts": experts[1:],
        "router": {"files": _dump_state(moe.router.net, root, "tensors/router")},
        "meta": moe.meta,
    }
    out = root / HEADER
    out.write_text(json.dumps(header, indent=2))
    return out


def load_moe(path: str | Path) -> MoEParams:
    path = Path(path)
    header_path = path / HEADER if path.is_dir() else path
    if not header_path.exists():
        raise FileNotFoundError(f"missing checkpoint header: {header_path}")
    root = header_path.parent
    header = json.loads(header_path.read_text())
    if header.get("format") != "radiolam-moe":
        raise ValueError(f"{header_path} is not a MoE checkpoint")
    n = int(header["E"])
    if header["arch_hash"] != architecture_hash(n):
        raise ValueError("checkpoint architecture hash does not match this build")

    def expert(entry):
        net = Denoiser()
        _load_state(net, root, entry["files"])
        return ExpertParams(net, entry["id"], entry["domain"])

    router = Router(n)
    _load_state(router, root, header["router"]["files"])
    s = header["schedule"]
    return MoEParams(
        shared=expert(header["shared"]),
        domain_experts=[expert(e) for e in header["domain_experts"]],
        router=RouterParams(router, tuple(header["labels"])),
        schedule=make_schedule(int(s["t_max"]), float(s["beta_1"]), float(s["beta_T"])),
        guidance_scale=float(header["g"]),
        meta=header.get("meta", {}),
    )
