"""Reviewer expertise ranking: keyword profiles, BM25-guided preference
triplets and a low-rank adapter over frozen text embeddings."""

__version__ = "0.1.0"
