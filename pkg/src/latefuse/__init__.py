"""Collaborative trajectory prediction by late fusion of shared forecasts.

Each simulated vehicle tracks agents, forecasts them with Gaussian
uncertainty, broadcasts quantized forecasts over a modeled V2X channel and
fuses what it receives into its own prediction map.
"""

__version__ = "0.1.0"
