# Radar GNSS Fusion Config Module
