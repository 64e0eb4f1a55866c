"""Vertical federated learning engine and simulator.

Trains linear / logistic models across feature-partitioned parties
under Paillier additive homomorphic encryption, on a deterministic
simulated network, with two accelerations: stale-backup straggler
mitigation and PCA compression of the encrypted gradient computation.
"""

__version__ = "0.1.0"
