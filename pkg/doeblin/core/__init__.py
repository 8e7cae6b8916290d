"""Core configuration, constants and errors"""
