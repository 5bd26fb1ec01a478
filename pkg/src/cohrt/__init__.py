"""CoHRT: coordination server, simulated robot teammate, and fluency metrics
for desk-scale human-robot block-stacking sessions."""

__version__ = "0.1.0"
