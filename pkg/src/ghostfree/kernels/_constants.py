# sRGB (IEC 61966-2-1) primaries, D65 white.
RGB_TO_XYZ = (
    (0.412453, 0.357580, 0.180423),
    (0.212671, 0.715160, 0.072169),
    (0.019334, 0.119193, 0.950227),
)
# Reference white is the XYZ of RGB (1, 1, 1) under the matrix above, so every
# neutral gray has a* = b* = 0 exactly. The rounded D65 triple
# (0.95047, 1.0, 1.08883) differs by ~1e-5 and leaves white at |b*| ~ 5e-3.
WHITE_D65 = tuple(sum(row) for row in RGB_TO_XYZ)
LAB_EPS = 0.008856
LAB_KAPPA = 7.787
