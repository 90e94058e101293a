# Radar GNSS Fusion Core Components
