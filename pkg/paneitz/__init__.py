"""
Numerical lab for prescribing the Paneitz curvature on S^n, n >= 5.

Modules:
    sphere_core    constants, geometry and concentration-adapted quadrature
    curvature      curvature fields K with derivatives
    bubbles        standard bubbles, interactions eps_ij and P-inner products
    functional     J on bubble configurations, expansions and gradient pairings
    flow           pseudogradient flow on (a, lambda) and its classification
    morse          critical points of K, Z/2 Morse complex and homology of X
    assumptions    checks of the topological assumptions
    perturbation   local perturbation of K at critical points
    axisym         axisymmetric discretization and Newton solver
    cli            command-line experiment harness
"""

__version__ = "0.1.0"
