"""
FastAPI route handlers
"""
