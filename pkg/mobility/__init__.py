# Mobility prediction with hierarchical temporal tokens and a frozen backbone
