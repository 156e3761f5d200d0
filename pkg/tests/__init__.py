"""Test suite for prism-desk"""
