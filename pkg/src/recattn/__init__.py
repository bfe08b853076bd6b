"""Two-stream recurrent-attention classifier for fine-grained images.

A desk-scale, from-scratch implementation: a global image stream plus a
local patch stream that re-reads one patch feature through stacked LSTM
steps, aggregates the refinements with trainable soft attention, and fuses
both streams for prediction.  Includes per-step Grad-CAM saliency, a
synthetic fine-grained dataset, and an ablation harness.
"""

__version__ = "0.1.0"
