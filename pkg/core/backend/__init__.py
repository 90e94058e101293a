# Radar GNSS Fusion Backend
