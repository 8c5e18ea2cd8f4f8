"""Metrics module for neuralvqr"""
