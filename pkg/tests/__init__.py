# ECGLens Tests
