"""Compare the three attention variants: what each token sees, and what it costs.

Run: python3 demos/attention_costs.py
"""

import torch

from csci.attention import CO, ID, Block, color_reid_mask, flop_model

torch.manual_seed(0)
T, dim = 6, 16
blk = Block(dim, heads=2)
x = torch.randn(1, T, dim)

with torch.no_grad():
    full = blk.weights(x)[0, 0]
    masked = blk.weights(x, color_reid_mask(T))[0, 0]
print("token order: [color, re-id, spatial...]")
print(f"traditional: re-id attends to color with weight {full[ID, CO]:.3f}")
print(f"masked:      re-id attends to color with weight {masked[ID, CO]:.3f}")
print(f"             color attends to re-id with weight {masked[CO, ID]:.3f}")

print("\nFLOPs for a ViT-L sized stack, T=258 tokens:")
for variant in ("traditional", "masked", "s2a"):
    f = flop_model(variant, 258, 1024, 16, 24)
    print(f"  {variant:<12} attention {f['attention'] / 1e9:7.2f} GFLOPs, blocks total {f['total'] / 1e9:7.2f}")

print("\nS2A overhead over traditional blocks, by token count:")
for n in (4, 16, 64, 258):
    base = flop_model("traditional", n, 1024, 16, 24)["total"]
    s2a = flop_model("s2a", n, 1024, 16, 24)["total"]
    print(f"  T={n:<4} +{100 * (s2a - base) / base:.1f}%")
