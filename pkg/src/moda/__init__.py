"""Multi-task offline RL with contrastive data sharing on a synthetic grid city.

Subpackages and modules:

- ``gridsim``: ground-truth grid environment and behavior policies
- ``datasets``: trajectory containers, partitioning, JSONL serialization
- ``nnkit``: minimal numpy-backed layers, losses, Adam, checkpoints
- ``kernels``: convolution kernels (compiled extension with numpy fallback)
- ``contrastive``: sub-trajectory embedding and variance-gated data sharing
- ``worldmodel``: per-task dynamics, GAN transition detector, robust MDP
- ``sac``: discrete soft actor-critic trained inside the robust MDP
- ``harness``: configs, pipeline stages, experiment runners, CLI
"""

__version__ = "0.1.0"
