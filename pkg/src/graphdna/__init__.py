"""Bloom-filter neighborhood signatures for graph-regularized recommenders."""
from .bloom import BloomFilter, HashFamily, params_for
from .dna import DnaConfig, DnaMatrix, encode
from .errors import (DivergenceError, GraphDNAError, InputError, NnzCapError,
                     UndefinedMetricError)
from .factorize import FactorModel, TrainConfig, train_cofactor, train_grmf, train_wmf
from .graph import AugmentedGraph, SparseGraph, augment, erdos_renyi, power_combine
from .ratings import RatingData
from .synth import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "AugmentedGraph", "BloomFilter", "DivergenceError", "DnaConfig", "DnaMatrix",
    "FactorModel", "GraphDNAError", "HashFamily", "InputError", "NnzCapError",
    "RatingData", "SparseGraph", "SynthConfig", "TrainConfig", "UndefinedMetricError",
    "augment", "encode", "erdos_renyi", "generate", "params_for", "power_combine",
    "train_cofactor", "train_grmf", "train_wmf",
]
