"""Learned class-K gain tuning for input-constrained barrier functions."""
