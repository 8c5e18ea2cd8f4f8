"""API module for neuralvqr"""
