"""
Artifact I/O and logging helpers
"""
