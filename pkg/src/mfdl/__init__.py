"""mfdl: a small numerical deep-learning toolkit.

Subpackages and modules:

- ``autodiff``: scalar computational graphs with forward/reverse sweeps
- ``nn``: MLPs, activations, output wrappers and Taylor-mode passes
- ``objectives``: benchmark objectives (quadratics, regression, PDE losses)
- ``optim``: deterministic and stochastic optimizers
- ``uat``: constructive ReLU approximation
- ``odeflow``: ODE solvers and the Neural-ODE adjoint
- ``rl``: finite MDPs, planners and tabular learners
- ``genmod``: diffusion, flow matching and the VAE
- ``statutil``: Monte Carlo, divergences and SDE simulation
"""

__version__ = "0.1.0"
