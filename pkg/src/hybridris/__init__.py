"""Energy-efficiency optimisation of hybrid-RIS-assisted cell-free downlinks."""

__version__ = "0.1.0"
