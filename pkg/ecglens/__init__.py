# ECGLens engine: residual 1D-CNN arrhythmia classifier, metrics, baselines and attributions
__version__ = "0.1.0"
