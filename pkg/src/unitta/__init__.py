"""Uniform test-time adaptation: ULMM stream simulation and the BDN/COFA framework."""
