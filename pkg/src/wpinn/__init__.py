"""Neural-network solvers for linear PDEs on the unit hypercube with weighted residual losses."""
