"""Potential theory toolkit for X-elliptic divergence-form operators."""
