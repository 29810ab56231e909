"""Single-frame multimodal action anticipation.

RGB and depth frame embeddings are fused by cross-attention, combined
with an encoding of the preceding action sequence, and classified into
the next action. Everything numeric runs on a small reverse-mode
autodiff core over numpy; no deep-learning framework is involved.
"""

__version__ = "0.1.0"
