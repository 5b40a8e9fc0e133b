"""Discrete flow matching for graph generation with controllable symmetry modulation.

Core pieces: categorical graph types and isomorphism tools (`graphs`),
synthetic dataset families (`datasets`), positional encodings with a scalar
symmetry-modulation knob (`encodings`), the CTMC flow-matching machinery
(`flow`), a numpy graph-transformer denoiser with its own reverse-mode tape
(`model`), the training loop with permutation schedules (`training`),
sample-quality metrics (`evaluation`), and the command-line front end
(`cli`).
"""

__version__ = "0.1.0"
