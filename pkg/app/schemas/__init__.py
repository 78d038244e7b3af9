"""
Pydantic schemas for configuration, run records and API requests
"""
