"""
ECGLens command-line interface
"""
