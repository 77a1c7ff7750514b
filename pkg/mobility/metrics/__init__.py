# Ranking, trajectory and temporal metrics plus the frequency baseline
