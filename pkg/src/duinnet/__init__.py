"""Multimodal point cloud completion toolkit.

Subpackages: ``tensor`` (autodiff engine), ``nn`` (layers/optimizer),
``geometry`` (sampling/visibility/mesh io), ``metrics`` (Chamfer/F-Score),
``model`` (the completion network), ``datasetgen`` (benchmark synthesis),
``cli`` (command-line entry points).
"""

__version__ = "0.1.0"
