# Numerical kernels package
