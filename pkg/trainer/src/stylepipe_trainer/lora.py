"""Low-rank adapters over frozen linear layers.

Each adapted nn.Linear computes base(x) + (alpha/rank) * B(A(dropout(x)))
where A and B are the only trainable parameters. The base module's weights
are frozen and bit-identical before and after training.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import torch
import torch.nn as nn

logger = logging.getLogger(__name__)

ADAPTER_FILE = "adapter.pt"
ADAPTER_CONFIG_FILE = "adapter-config.json"


class LoraLinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: float, dropout: float):
        super().__init__()
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.scaling = alpha / rank
        self.dropout = nn.Dropout(dropout)
        self.lora_a = nn.Linear(base.in_features, rank, bias=False)
        self.lora_b = nn.Linear(rank, base.out_features, bias=False)
        nn.init.normal_(self.lora_a.weight, std=0.02)
        nn.init.zeros_(self.lora_b.weight)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scaling * self.lora_b(self.lora_a(self.dropout(x)))


def effective_rank(requested: int, model_dim: int) -> int:
    """Cap the adapter rank at the model width; anything above is wasted."""
    return min(requested, model_dim)


def apply_lora(model: nn.Module, rank: int, alpha: float, dropout: float) -> list[str]:
    """Wrap every nn.Linear except the LM head; returns the adapted paths.

    Targets are snapshotted before any replacement so the linears inside the
    new wrappers are never themselves wrapped.
    """
    for param in model.parameters():
        param.requires_grad = False
    targets = []
    for name, module in list(model.named_modules()):
        if isinstance(module, LoraLinear):
            continue
        for child_name, child in module.named_children():
            if isinstance(child, nn.Linear) and child_name != "head":
                targets.append((module, name, child_name, child))
    for module, name, child_name, child in targets:
        setattr(module, child_name, LoraLinear(child, rank, alpha, dropout))
    if not targets:
        raise ValueError("no linear layers found to adapt")
    return [f"{name}.{child_name}" if name else child_name for _, name, child_name, _ in targets]


def trainable_parameters(model: nn.Module):
    return [p for p in model.parameters() if p.requires_grad]


def adapter_state(model: nn.Module) -> dict[str, torch.Tensor]:
    return {
        name: tensor.detach().clone()
        for name, tensor in model.state_dict().items()
        if "lora_a" in name or "lora_b" in name
    }


def base_checksum(model: nn.Module) -> str:
    """SHA-256 over all non-adapter parameters, in name order."""
    import hashlib

    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        if "lora_a" in name or "lora_b" in name:
            continue
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def save_adapter(model: nn.Module, out_dir: str | Path, config: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / ADAPTER_FILE
    torch.save(adapter_state(model), path)
    (out_dir / ADAPTER_CONFIG_FILE).write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def load_adapter(model: nn.Module, adapter_dir: str | Path) -> dict:
    adapter_dir = Path(adapter_dir)
    config = json.loads((adapter_dir / ADAPTER_CONFIG_FILE).read_text(encoding="utf-8"))
    apply_lora(model, rank=config["rank"], alpha=config["alpha"], dropout=0.0)
    state = torch.load(adapter_dir / ADAPTER_FILE, map_location="cpu", weights_only=True)
    missing, unexpected = model.load_state_dict(state, strict=False)
    if unexpected:
        raise ValueError(f"unexpected adapter tensors: {unexpected[:4]}")
    loaded = {k for k in state}
    expected = {k for k in model.state_dict() if "lora_a" in k or "lora_b" in k}
    if loaded != expected:
        raise ValueError("adapter file does not match the model's adapted layers")
    return config
