"""flab: a desk-scale continual-learning experiment engine.

Procedurally generated 2D shape-sprite tasks (classification, SDF
reconstruction, silhouette prediction, autoencoding), a deterministic
numpy-backed neural-network core, exemplar-based continual learners,
and feature-forgetting analysis tools (CKA, visual-feature probes,
FC finetuning), all driven from JSON configs with CSV outputs.
"""

__version__ = "0.1.0"

ENGINE_VERSION = __version__
