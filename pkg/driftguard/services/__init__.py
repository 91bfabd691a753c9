# Numerical core and experiment orchestration.
