# Radar GNSS Fusion Factory Module
