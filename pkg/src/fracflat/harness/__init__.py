"""Configuration, calibration and report generation for batch experiments."""
