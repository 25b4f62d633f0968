"""WLAN fingerprint localization with kernel fuzzy c-means labelling and
class-matching semi-supervised discriminant embedding."""

__version__ = "0.1.0"
