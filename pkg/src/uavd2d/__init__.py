"""Joint placement and power scheduling for aerial broadcast transmitters
coexisting with device-to-device links on shared spectrum."""

__version__ = "0.1.0"
