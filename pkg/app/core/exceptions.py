"""
Jerarquía de excepciones de UniDet-Lab
"""


class UniDetError(Exception):
    """Error base del proyecto"""


class ConfigurationError(UniDetError, ValueError):
    """Configuración o parámetro inválido"""


class ShapeMismatchError(UniDetError, ValueError):
    """Formas de tensores incompatibles"""


class NonFiniteError(UniDetError, FloatingPointError):
    """Una operación produjo NaN o Inf"""


class TapeError(UniDetError, RuntimeError):
    """Uso incorrecto de la cinta de autodiferenciación"""


class HiddenAnnotationError(UniDetError, PermissionError):
    """Lectura de anotaciones ocultas del dominio objetivo"""


class RenderError(UniDetError, RuntimeError):
    """No se pudo renderizar la escena solicitada"""


class TrainingDivergedError(UniDetError, RuntimeError):
    """El entrenamiento produjo una pérdida no finita"""
