"""Slot-preserving refinement of detector scores with evidence-guided reranking."""

__version__ = "0.1.0"
