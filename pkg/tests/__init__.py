"""Tests for the windcast package."""
