"""
Excepciones del dominio y codigos de salida de la CLI
"""

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_DEGENERATE = 3
EXIT_PARTIAL = 4


class NetworkFeatureError(Exception):
    """Base de todos los errores del paquete"""
    exit_code: int = EXIT_INPUT_ERROR


class InvalidInputError(NetworkFeatureError, ValueError):
    """Entrada con valores o identificadores no validos"""


class EmptyInputError(InvalidInputError):
    """Entrada vacia donde se requiere al menos un elemento"""


class InsufficientPointsError(InvalidInputError):
    """No hay suficientes puntos (o vecinos alcanzables) para el K pedido"""

    def __init__(self, message: str, point_indices=None):
        super().__init__(f"insufficient points: {message}")
        self.point_indices = list(point_indices or [])


class ResourceLimitError(InvalidInputError):
    """Se supero un limite de recursos (puntos esperados o tiempo)"""


class DegenerateFitError(NetworkFeatureError, RuntimeError):
    """El ajuste EM colapso a una sola componente"""
    exit_code = EXIT_DEGENERATE


class PartialResultsError(NetworkFeatureError, RuntimeError):
    """Algunas zonas no se pudieron clasificar"""
    exit_code = EXIT_PARTIAL
