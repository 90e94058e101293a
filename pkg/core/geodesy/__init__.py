# Radar GNSS Fusion Geodesy
