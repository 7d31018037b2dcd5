"""Multi-day commodity price forecasting with a CNN-BiGRU network.

The network, its gradients, the swarm tuner and the preprocessing pipeline
are written directly against numpy. The ``forecast`` console script in
:mod:`pricecast.cli` wires them into a batch tool.
"""

__version__ = "0.1.0"
