"""Spatio-temporal graph convolutional network for predicting team performance
from short windows of agent trajectories and field-of-view counts.

Modules: ``numerics`` (RNG, Adam, activations), ``graph`` (distance graph and
normalized Laplacian), ``model`` (ST-GCN forward/backward and trainer),
``baselines`` (FNN, GCN-only, GRU-only), ``data`` (trace parsing and
segmentation), ``simulator`` (synthetic missions), ``evaluation`` (metrics),
``config`` (run configs and checkpoints) and ``cli``.
"""

__version__ = "0.1.0"
