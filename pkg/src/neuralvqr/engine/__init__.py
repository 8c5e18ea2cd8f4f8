"""Potential networks, conjugate solver and amortizer"""
