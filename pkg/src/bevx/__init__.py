"""Cross-scale hierarchical BEV segmentation with correspondence-augmented
attention, built on a small self-contained autodiff core."""

__version__ = "0.1.0"
