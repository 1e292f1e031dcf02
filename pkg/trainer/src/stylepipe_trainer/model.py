"""Tiny byte-level causal language model for desk-scale training runs.

Stands in for the multi-billion-parameter bases the manifest may name:
the adapter machinery, freezing guarantees, and serving contract are
identical regardless of base size.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

PAD_ID = 256
EOS_ID = 257
VOCAB_SIZE = 258


def encode(text: str, max_len: int | None = None) -> list[int]:
    ids = list(text.encode("utf-8"))
    if max_len is not None:
        ids = ids[:max_len]
    return ids


def decode(ids: list[int]) -> str:
    return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")


class Block(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.ln1 = nn.LayerNorm(dim)
        self.attn_qkv = nn.Linear(dim, 3 * dim)
        self.attn_out = nn.Linear(dim, dim)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp_in = nn.Linear(dim, 4 * dim)
        self.mlp_out = nn.Linear(4 * dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        h = self.ln1(x)
        q, k, v = self.attn_qkv(h).chunk(3, dim=-1)
        shape = (b, t, self.n_heads, d // self.n_heads)
        q, k, v = (z.view(shape).transpose(1, 2) for z in (q, k, v))
        attn = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        x = x + self.attn_out(attn.transpose(1, 2).reshape(b, t, d))
        h = self.ln2(x)
        return x + self.mlp_out(F.gelu(self.mlp_in(h)))


class TinyCausalLM(nn.Module):
    def __init__(self, dim: int = 64, n_layers: int = 2, n_heads: int = 4, max_len: int = 512):
        super().__init__()
        self.dim = dim
        self.max_len = max_len
        self.tok_emb = nn.Embedding(VOCAB_SIZE, dim)
        self.pos_emb = nn.Embedding(max_len, dim)
        self.blocks = nn.ModuleList(Block(dim, n_heads) for _ in range(n_layers))
        self.ln_f = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, VOCAB_SIZE, bias=False)
        self.apply(self._init)

    @staticmethod
    def _init(module: nn.Module) -> None:
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        t = ids.shape[1]
        if t > self.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {self.max_len}")
        pos = torch.arange(t, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)[None, :, :]
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))

    @torch.no_grad()
    def generate(self, prompt_ids: list[int], max_new_tokens: int, temperature: float = 0.0) -> list[int]:
        """Greedy (or temperature-scaled) byte generation until EOS or budget."""
        self.eval()
        ids = list(prompt_ids)[-(self.max_len - max_new_tokens - 1):]
        out: list[int] = []
        for _ in range(max_new_tokens):
            window = torch.tensor([ids[-self.max_len:]], dtype=torch.long)
            logits = self(window)[0, -1]
            if temperature > 0:
                probs = F.softmax(logits / temperature, dim=-1)
                next_id = int(torch.multinomial(probs, 1).item())
            else:
                next_id = int(torch.argmax(logits).item())
            if next_id == EOS_ID:
                break
            ids.append(next_id)
            out.append(next_id)
        return out


# Named base-model presets; anything unrecognized falls back to the default
# tiny configuration (the name is still recorded in the run log).
BASE_PRESETS = {
    "tiny-causal-lm": dict(dim=64, n_layers=2, n_heads=4, max_len=512),
    "tiny-causal-lm-wide": dict(dim=128, n_layers=2, n_heads=4, max_len=512),
}


def build_base_model(base_model: str, seed: int) -> TinyCausalLM:
    preset = BASE_PRESETS.get(base_model, BASE_PRESETS["tiny-causal-lm"])
    torch.manual_seed(seed)
    return TinyCausalLM(**preset)
