"""
facegan: unpaired face/video translation with receptive-field-controlled patch discriminators
"""
__version__ = "0.1.0"
