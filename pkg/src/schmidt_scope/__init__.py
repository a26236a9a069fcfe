"""SDP certification toolkit for entanglement dimension and unfaithfulness."""

from schmidt_scope.qstate import (
    BipartiteState,
    PureBipartiteState,
    RngStream,
    SchmidtSpectrum,
)

__all__ = [
    "BipartiteState",
    "PureBipartiteState",
    "RngStream",
    "SchmidtSpectrum",
]

__version__ = "0.1.0"
