"""Color-token clothes-changing person re-identification at desk scale.

Modules
-------
color
    Pixel-binning and RGB-uv color histograms with an analytic gradient.
attention
    Traditional, masked and S2A self-attention blocks plus a FLOP model.
losses
    Cross-entropy, triplet, color MSE, disentanglement and motion losses.
model
    The encoder with ReID/Color tokens, the temporal-token video path and trainers.
data
    Synthetic clothes-changing data and JSONL manifests.
evaluation
    CMC/mAP under General, CC and SC protocols; k-means and DBSCAN.
"""

__version__ = "0.1.0"
