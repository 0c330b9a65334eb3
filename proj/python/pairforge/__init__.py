"""Python bindings for the pairforge core library."""

from ._pairforge import (
    CheckpointError,
    DegenerateGraphError,
    DimensionError,
    DivergenceError,
    Error,
    FormatError,
    HnswIndex,
    MiningError,
    NormalizationError,
    ParseError,
    ValidationError,
    brute_force_knn,
    covisibility,
    gem,
    netvlad,
    normalized_cut,
    positive_lists,
    ranked_list_loss,
    run,
    synth,
    triplet_loss,
)

__all__ = [name for name in dir() if not name.startswith("_")]
