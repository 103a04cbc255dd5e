"""Utility-driven rate control, a packet-level simulator to run it in, and an
equilibrium oracle for the underlying rate game."""
