"""Noise-adaptive PINN training with energy-based residual gating.

Subpackages: ``nets`` (MLP + jet autodiff), ``pdes`` (benchmark problems and
reference solvers), ``corruption`` (measurement noise and outliers), ``ebm``
(1D energy-based residual density), ``training`` (staged and baseline
trainers), ``evaluation`` (metrics and analysis exports), ``harness``
(experiment matrix) and ``cli``.
"""

__version__ = "0.1.0"
