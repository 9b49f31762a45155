"""Two-phase flow, transport and bacterial growth in the capillary fringe."""

__version__ = "0.1.0"
