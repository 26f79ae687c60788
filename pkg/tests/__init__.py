"""Test suite for histoad."""
