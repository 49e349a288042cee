"""Context-aware embedding toolkit for metadata-rich art collections.

Builds an artistic knowledge graph from painting metadata, learns node
context embeddings with biased random walks + skip-gram, trains
multi-task and graph-distilled visual models over precomputed features,
and evaluates attribute classification, cross-modal retrieval, and
cluster separability.
"""

__version__ = "0.1.0"
