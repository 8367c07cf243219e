"""Train the color-token model and a no-color baseline on synthetic data.

Identities are glyph shapes, clothes are colors, and the clothes-changing
protocol only counts matches across different colors. Takes about a minute
per seed on one CPU thread.

Run: python3 demos/desk_experiment.py [--seeds 0 1 2] [--epochs 30]
"""

import argparse

from csci.experiment import cluster_sanity, directional_experiment

ap = argparse.ArgumentParser()
ap.add_argument("--seeds", type=int, nargs="+", default=[0])
ap.add_argument("--epochs", type=int, default=30)
args = ap.parse_args()

res = directional_experiment(seeds=args.seeds, epochs=args.epochs,
                             log=lambda r: print(f"seed {r['seed']}: CSCI rank-1 {r['csci_rank1']:.3f}, "
                                                 f"baseline {r['base_rank1']:.3f}, |cos| {r['csci_abs_cos']:.3f}"))
m = res["mean"]
print(f"mean rank-1 {m['csci_rank1']:.3f} vs {m['base_rank1']:.3f}; mAP {m['csci_map']:.3f} vs {m['base_map']:.3f}")

# The color vectors alone should group images by outfit.
c = cluster_sanity(seed=args.seeds[0])
print(f"DBSCAN on color vectors: {c['clusters']} clusters for {c['groups']} outfits, "
      f"agreement {c['agreement']:.4f}, {c['noise']} noise points")
