"""Multi-user space-time block code detection: simulation and numerical verification.

Modules
-------
cxmat     small complex matrix kernel and the Alamouti block algebra
stcodes   constellations, Alamouti / quasi-orthogonal encoders, sum/difference conversion
fading    Rayleigh channels, noise, transmission, real decomposition of channel pairs
detect    joint ML, array-processing cancellation, whitened ML decoding
analysis  closed forms, identity checks and diversity-order estimators
harness   Monte Carlo engine, verification suites, export and command line
"""

__version__ = "0.1.0"
