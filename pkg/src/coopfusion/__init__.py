"""Cooperative 3D object detection with infrastructure depth sensors:
scenario simulation, early/late/hybrid fusion, and evaluation."""

__version__ = "0.1.0"
