"""Role-identity classification of social-media users from descriptions and tweets."""

__version__ = "0.1.0"
