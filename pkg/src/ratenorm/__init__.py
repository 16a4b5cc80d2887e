"""ANN training with Rate Norm Layers and conversion to spiking networks."""

__version__ = "0.1.0"
