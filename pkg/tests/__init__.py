"""
Test suite for the router evolution harness.
"""
