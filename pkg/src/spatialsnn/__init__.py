"""Spiking networks whose recurrent delays are distances between learnable neuron positions.

The package covers the full loop: simulation of leaky integrate-and-fire
networks with per-synapse transmission delays, adjoint-based gradients for
weights, delays, and positions, optimization with sparsity regularizers,
and a post-hoc analysis suite (graph topology metrics, position probes,
pruning and perturbation experiments).
"""

__version__ = "0.1.0"
