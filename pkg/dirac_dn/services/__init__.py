# Numerical services for the Dirac DN experiments
