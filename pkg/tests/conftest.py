import os

# keep BLAS single-threaded: the arrays are tiny and thread sync costs more
# than it saves; also keeps results reproducible across worker processes
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
