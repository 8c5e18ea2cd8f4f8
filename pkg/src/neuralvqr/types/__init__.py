"""Types module for neuralvqr"""
