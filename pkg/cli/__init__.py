# Radar GNSS Fusion CLI Module
