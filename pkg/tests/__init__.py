"""Test suite for the hier_factors package."""
