"""Horseshoe Forests and the Causal Horseshoe Forest for censored survival data."""
