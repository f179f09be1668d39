"""Hybrid quantum-classical reinforcement learning with jointly trained
autoencoder observation compression.

Subpackages cover: a from-scratch reverse-mode autodiff engine
(:mod:`~hybridqrl.autodiff`), qubit and continuous-variable circuit
simulators with analytic gradients (:mod:`~hybridqrl.qubit`,
:mod:`~hybridqrl.photonic`), classical networks (:mod:`~hybridqrl.networks`),
environments (:mod:`~hybridqrl.envs`), PPO training (:mod:`~hybridqrl.ppo`),
learning-curve metrics (:mod:`~hybridqrl.metrics`) and the ensemble runner /
CLI (:mod:`~hybridqrl.runner`, :mod:`~hybridqrl.cli`).
"""

__version__ = "0.1.0"
