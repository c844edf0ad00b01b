"""molfuse: multimodal molecular property prediction at desk scale.

Geometry embeddings from an invariant continuous-filter message-passing
encoder over XYZ structures, text embeddings from PubChem descriptors,
a gated fusion head, and an ablation harness comparing multimodal against
geometry-only models per target.
"""

__version__ = "0.1.0"

from .qm9 import Molecule, TargetId, parse_xyz  # noqa: E402,F401
from .graphs import MoleculeGraph, RbfConfig, build_graph, rbf_expand  # noqa: E402,F401
from .encoder import EncoderConfig, EncoderParams, encode, pool  # noqa: E402,F401
from .fusion import FusionConfig, FusionParams, fuse, geometry_only_head, predict  # noqa: E402,F401
from .pubchem import PubChemClient, TextDescriptors, render_description  # noqa: E402,F401
from .textfeat import EmbeddingRecord, ProjectionHead, featurize_descriptors, project  # noqa: E402,F401
from .training import TrainConfig, percent_change, run_ablation, split_folds, train  # noqa: E402,F401
