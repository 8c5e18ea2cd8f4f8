"""Command-line interface for neuralvqr"""
