name = "medanon"
__version__ = "0.1.0"
