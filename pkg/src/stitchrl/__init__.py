"""Transition policies and learned switching between pre-trained skills."""

__version__ = "0.1.0"
