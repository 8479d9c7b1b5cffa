"""Exception types raised across the package."""

import numpy as np


class CvviError(Exception):
    """Base class for every error raised by cvvi."""


class NotPositiveDefinite(CvviError, np.linalg.LinAlgError):
    pass


class NotPSD(CvviError, np.linalg.LinAlgError):
    pass


class Singular(CvviError, np.linalg.LinAlgError):
    pass


class SingularMoments(CvviError, np.linalg.LinAlgError):
    pass


class DatasetError(CvviError, ValueError):
    """Anything wrong with reading or interpreting a dataset."""


class DatasetNotFound(DatasetError, FileNotFoundError):
    pass


class ParseError(DatasetError):
    pass


class LabelError(DatasetError):
    pass


class EmptyDataset(DatasetError):
    pass


class BadBatchSize(CvviError, ValueError):
    pass


class BadGamma(CvviError, ValueError):
    pass


class DimensionMismatch(CvviError, ValueError):
    pass


class EstimatorUnavailable(CvviError, ValueError):
    pass


class NonFinite(CvviError, FloatingPointError):
    pass


class ConfigError(CvviError, ValueError):
    pass
