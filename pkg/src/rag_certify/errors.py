"""Exception hierarchy. Each category maps to a distinct CLI exit code."""


class RagCertifyError(Exception):
    exit_code = 1


class MissingInput(RagCertifyError):
    exit_code = 3


class FormatError(RagCertifyError):
    exit_code = 4


class EmptyDocument(FormatError):
    pass


class BadLayout(FormatError):
    pass


class CalibrationError(RagCertifyError):
    exit_code = 5


class DegenerateScores(CalibrationError):
    pass


class NoCorrectChunks(CalibrationError):
    pass


class ClassifierError(RagCertifyError):
    exit_code = 6


class OneClassOnly(ClassifierError):
    pass


class ModeMismatch(ClassifierError):
    pass
