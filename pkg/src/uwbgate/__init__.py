"""Simulator and library for UWB tagless-gate localization with pose awareness."""
