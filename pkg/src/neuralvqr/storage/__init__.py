"""Storage module for neuralvqr"""
