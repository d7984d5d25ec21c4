"""Two-stage multi-scale solver for time-dependent nonlinear
thermo-electro-mechanical coupling in 2D periodic composites.

Off-line stage: solve unit-cell corrector problems over a grid of
representative temperatures and tabulate homogenized coefficients.
On-line stage: time-step the homogenized macroscopic system, then
reconstruct low- and high-order multi-scale fields for comparison with a
direct fine-mesh reference solution.
"""

__version__ = "0.1.0"
