"""Column l2,0-regularized factorization for low-rank matrix completion."""
