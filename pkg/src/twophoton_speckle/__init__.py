"""Single- and two-photon speckle of entangled light in random media."""

from .states import (
    EigenvalueSpectrum,
    ReducedDensityMatrix,
    StateEnsemble,
    make_fully_mixed,
    make_general_pure,
    make_pure_entangled,
    purity,
    reduced_density,
    schmidt_spectrum,
)
from .engine import DetectorPair, Efficiencies, ScatteringModel, run_ensemble

__version__ = "0.1.0"
