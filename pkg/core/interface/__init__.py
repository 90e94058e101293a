# Radar GNSS Fusion Core Interface
