"""Core components of the experiment harness"""
