"""
DriveLens API Module
Flask-based REST API over the trip analysis pipeline
"""

from .app import create_app

__all__ = ['create_app']
