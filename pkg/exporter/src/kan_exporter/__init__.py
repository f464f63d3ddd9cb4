"""Convert PyKAN-style checkpoints into the neutral KAN model JSON format.

The exporter is deliberately self-contained: it bundles its own small
B-spline evaluators (one reading the raw checkpoint tensors, one reading
the written neutral file) so the conversion can be verified end to end
without depending on any downstream runtime.
"""

from .exporter import ExportError, ExportManifest, export

__version__ = "0.1.0"
