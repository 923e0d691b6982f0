"""Directed polymer and product-martingale laboratory."""
