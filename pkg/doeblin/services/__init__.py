"""Samplers, oracles, learning and experiment services"""
