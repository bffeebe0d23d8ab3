"""Quantization, HYM relaxation and envelope diagnostics for geodesics of Kahler potentials.

Modules
-------
geometry
    Sphere and domain grids, the reference potential and quadrature.
quantization
    Hilbert and Fubini-Study maps between potentials and Gram matrices.
hym
    Hermitian-Yang-Mills relaxation for metric fields on a planar domain.
envelope
    Graph-sweep envelopes, harmonic majorants and the toric oracle.
analysis
    Mixed Hessians, Poisson brackets and WZW residuals.
experiments
    Configured convergence studies and property suites.

Submodules are imported explicitly so that ``python -m wzwlab --threads``
can cap BLAS threads before numpy loads.
"""
__version__ = "0.1.0"
