"""Neural discriminant analysis on a small self-contained autodiff core."""

__version__ = "0.1.0"
