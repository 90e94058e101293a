# Radar GNSS Fusion IO
