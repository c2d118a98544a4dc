"""tokenstyle - style-conditioned token generation experiments"""

__version__ = "0.1.0"
