"""From-scratch numpy layers and the recognition network."""
from rasm.nncore.functional import conv_cost, conv_weight_count, softmax
from rasm.nncore.network import Network, NetworkConfig, build_network

__all__ = ["Network", "NetworkConfig", "build_network", "conv_cost", "conv_weight_count", "softmax"]
