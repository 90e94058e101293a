# Radar GNSS Fusion Radar
