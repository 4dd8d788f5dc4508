"""Stochastic PV hosting capacity of three-phase LV feeders."""
