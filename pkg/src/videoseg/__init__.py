"""Semi-supervised video instance segmentation engine.

Three passes over a sequence annotated at frame 0: a tracking/online-learning
preview pass, a context-routed refinement pass, and a guided-ROI propagation
pass, followed by rare-instance recovery, boundary snapping and z-order
merging into per-frame label maps. All learned perception sits behind
pluggable providers with deterministic classical fallbacks.
"""

__version__ = "0.1.0"
