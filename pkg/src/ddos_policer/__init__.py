"""Three-layer DDoS traffic policing and a flow-level simulator to exercise it."""

__version__ = "0.1.0"
