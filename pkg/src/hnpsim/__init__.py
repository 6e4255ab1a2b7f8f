"""Forward models and estimators for single-Er3+ hollow-nanopillar emitters.

Submodules
----------
blueprint   HNP lattice, excitation spot and Poisson ion-count blueprint
implant     implanted depth-profile ingestion and overlap integrals
levels      five-level Er3+ population dynamics and upconversion ladder
coherent    optical Bloch equations and Rabi / Ramsey / echo sequences
photons     Monte-Carlo click streams, pulsed g2 correlator, camera images
fitting     damped least-squares engine and model library
lineshape   Lorentzian x laser-kernel convolved lineshapes
config      unit-aware experiment configs and presets
cli         command-line entry point
"""

__version__ = "0.1.0"
