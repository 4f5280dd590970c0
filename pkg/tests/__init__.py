"""Test suite for rflab."""
