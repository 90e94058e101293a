# Radar GNSS Fusion Simulator
