"""FreeCG: free-design CG operations on permutation-invariant abstract edges.

A small, CPU-first interatomic potential built on a fixed
``(l=1, p=-1) + (l=2, p=+1)`` irreps layout, with grouped Clebsch-Gordan
transforms, channel shuffling and an attention enhancer.

>>> from freecg import FreeCG, ModelConfig, build_cg_table
>>> len(build_cg_table().entries)
137
"""

from .autodiff import get_dtype, set_precision
from .cg_ops import ConfigError, GroupCG, OpCount, count_basic_ops, group_cg, shuffle, ShuffleSpec
from .irreps import LAYOUT, LAYOUT_DIM, PathMode, build_cg_table, enumerate_paths, spherical_harmonics, wigner_d
from .model import FreeCG, ModelConfig, MoleculeFrame, build_neighbor_list, energy_and_forces
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FreeCG",
    "GroupCG",
    "LAYOUT",
    "LAYOUT_DIM",
    "ModelConfig",
    "MoleculeFrame",
    "OpCount",
    "PathMode",
    "ShuffleSpec",
    "TrainConfig",
    "build_cg_table",
    "build_neighbor_list",
    "count_basic_ops",
    "energy_and_forces",
    "enumerate_paths",
    "get_dtype",
    "group_cg",
    "set_precision",
    "shuffle",
    "spherical_harmonics",
    "train",
    "wigner_d",
]
