"""Numerical sandbox: data generation, models, objectives and metrics"""
