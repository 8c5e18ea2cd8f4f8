"""Conformal prediction module for neuralvqr"""
