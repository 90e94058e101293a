# Radar GNSS Fusion Robust
