# Trajectory ingestion and synthetic generation
