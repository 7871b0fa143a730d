"""Per-flow network traffic forecasting toolkit.

Turns flow records into windowed heterogeneous graphs, trains a masked
graph autoencoder to forecast the next window's connection features and
IP/Port attachments, and benchmarks it against sequence baselines under
a shared compound metric and tuning regime.
"""

__version__ = "0.1.0"
