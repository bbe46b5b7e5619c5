"""Tests for the fedwatch package."""
