# Radar GNSS Fusion IMU Preintegration
