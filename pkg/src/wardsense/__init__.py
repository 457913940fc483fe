"""Analytics for ICU bedside sensor streams: wearable actigraphy, facial action
units, body keypoints, detection quality, room environment and cohort statistics."""

__version__ = "0.1.0"
