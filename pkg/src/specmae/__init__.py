"""Masked-autoencoder pretraining and speech enhancement on log-mel spectrograms."""

__version__ = "0.1.0"
