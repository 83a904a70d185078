"""
Utilidades del sistema
"""

