"""Frequency-enhanced fusion blocks, the Inner-SIoU loss family and a small
NMS-free detector, all with hand-written backward passes on numpy."""

from .tensor import Graph, Tensor, backward

__version__ = "0.1.0"

__all__ = ["Graph", "Tensor", "backward", "__version__"]
