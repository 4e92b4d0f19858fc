"""Prototype-guided distillation of GNN teachers into edge-free MLP students."""

__version__ = "0.1.0"
