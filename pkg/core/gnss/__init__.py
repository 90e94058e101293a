# Radar GNSS Fusion GNSS
