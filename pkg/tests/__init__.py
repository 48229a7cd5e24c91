"""Test package for the homogenization toolkit."""
