from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Any, Dict, List, Literal, Optional, Tuple, Union
import math
import os

SCHEMA_VERSION = "1.0"

Label = Literal["feature", "clutter"]
FEATURE: Label = "feature"
CLUTTER: Label = "clutter"

# --- Network ---

class Vertex(BaseModel):
    """Vertice de la red con coordenadas planas"""
    id: int = Field(..., ge=0)
    x: float
    y: float

    @field_validator('x', 'y')
    @classmethod
    def validate_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("Las coordenadas deben ser finitas")
        return v

class Segment(BaseModel):
    """Segmento recto entre dos vertices"""
    id: int = Field(..., ge=0)
    a: int = Field(..., ge=0)
    b: int = Field(..., ge=0)
    length: float = Field(..., gt=0, description="Longitud en unidades de la red")

    @property
    def is_self_loop(self) -> bool:
        return self.a == self.b

class NetPoint(BaseModel):
    """Ubicacion sobre la red: segmento y distancia desde su vertice a"""
    model_config = ConfigDict(frozen=True)

    segment_id: int = Field(..., ge=0)
    offset: float = Field(..., ge=0)

# --- Volumes & mixture ---

class VolumeSample(BaseModel):
    point_index: int = Field(..., ge=0)
    K: int = Field(..., ge=1)
    d_k: float = Field(..., ge=0, description="Distancia al K-esimo vecino")
    s_k: float = Field(..., gt=0, description="Volumen del disco de radio d_k")

class GammaComponent(BaseModel):
    shape: int = Field(..., ge=1)
    rate: float = Field(..., gt=0)

    @field_validator('rate')
    @classmethod
    def validate_rate(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("La tasa debe ser finita")
        return v

class MixtureFit(BaseModel):
    """Resultado del EM para la mezcla de dos Gammas"""
    K: int = Field(..., ge=1)
    lambda1: float = Field(..., description="Tasa de la componente de feature")
    lambda2: float = Field(..., description="Tasa de la componente de clutter")
    p: float = Field(..., ge=0.0, le=1.0)
    delta: List[float] = Field(..., description="Probabilidades posteriores de feature")
    loglik_trace: List[float] = []
    iterations: int = Field(0, ge=0)
    converged: bool = False
    degenerate: bool = False

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1] if self.loglik_trace else float("nan")

    def report(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "K": self.K,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "p": self.p,
            "iterations": self.iterations,
            "converged": self.converged,
            "degenerate": self.degenerate,
            "loglik": self.loglik,
        }

class Classification(BaseModel):
    labels: List[Label]
    fit: MixtureFit
    K: int = Field(..., ge=1)
    threshold: Optional[float] = Field(None, description="Volumen donde se cruzan las densidades")
    degenerate: bool = False

    @property
    def n_features(self) -> int:
        return sum(1 for label in self.labels if label == FEATURE)

# --- K selection ---

class EntropyCurve(BaseModel):
    ks: List[int]
    entropies: List[float]
    skipped: List[int] = Field(default_factory=list, description="K con ajuste EM degenerado")

    @model_validator(mode='after')
    def validate_curve(self):
        if len(self.ks) != len(self.entropies):
            raise ValueError("ks y entropies deben tener la misma longitud")
        if any(b <= a for a, b in zip(self.ks, self.ks[1:])):
            raise ValueError("ks debe ser estrictamente creciente")
        if any(e < 0 for e in self.entropies):
            raise ValueError("Las entropias no pueden ser negativas")
        return self

class SegmentedFit(BaseModel):
    beta: float
    gamma: float
    psi: float
    rss: float = Field(..., ge=0)
    k_hat: int = Field(..., ge=1)
    flat: bool = False
    suspicious: bool = Field(False, description="Pendiente positiva antes del cambio")
    fitted: List[float] = []

    def report(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "psi": self.psi,
            "beta": self.beta,
            "gamma": self.gamma,
            "rss": self.rss,
            "k_hat": self.k_hat,
            "flat": self.flat,
            "suspicious": self.suspicious,
        }

class KSelection(BaseModel):
    """K elegido y, en modo automatico, la curva y el ajuste que lo produjeron"""
    K: int = Field(..., ge=1)
    mode: Literal["fixed", "auto"]
    curve: Optional[EntropyCurve] = None
    fit: Optional[SegmentedFit] = None

# --- Simulation ---

class LabelledPattern(BaseModel):
    points: List[NetPoint]
    truth: List[Label]
    layer: List[int] = Field(default_factory=list, description="Indice de la capa de origen")

    @model_validator(mode='after')
    def validate_lengths(self):
        if len(self.points) != len(self.truth):
            raise ValueError("points y truth deben tener la misma longitud")
        if self.layer and len(self.layer) != len(self.points):
            raise ValueError("layer debe tener la misma longitud que points")
        return self

class ConfusionRates(BaseModel):
    tp: int = Field(..., ge=0)
    fp: int = Field(..., ge=0)
    tn: int = Field(..., ge=0)
    fn: int = Field(..., ge=0)
    tpr: Optional[float] = Field(None, ge=0.0, le=1.0)
    fpr: Optional[float] = Field(None, ge=0.0, le=1.0)
    acc: float = Field(..., ge=0.0, le=1.0)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

class KPolicy(BaseModel):
    """Politica de eleccion de K: fija o automatica"""
    mode: Literal["fixed", "auto"]
    k: Optional[int] = Field(None, ge=1)
    k_max: int = Field(35, ge=2)

    @model_validator(mode='after')
    def validate_policy(self):
        if self.mode == "fixed" and self.k is None:
            raise ValueError("Una politica fija necesita k")
        return self

    @property
    def label(self) -> str:
        return str(self.k) if self.mode == "fixed" else "K_hat"

    @property
    def needed_k(self) -> int:
        return self.k if self.mode == "fixed" else self.k_max

    @classmethod
    def parse(cls, text: Union[str, int, "KPolicy"]) -> "KPolicy":
        """Acepta 5, "5", "fixed:5", "auto" o "auto:35" """
        if isinstance(text, KPolicy):
            return text
        if isinstance(text, int):
            return cls(mode="fixed", k=text)
        value = str(text).strip().lower()
        if value.startswith("auto"):
            _, _, k_max = value.partition(":")
            return cls(mode="auto", k_max=int(k_max) if k_max else 35)
        if value.startswith("fixed:"):
            value = value.split(":", 1)[1]
        return cls(mode="fixed", k=int(value))

class LayerSpec(BaseModel):
    role: Label
    rate: float = Field(..., gt=0, description="Intensidad por unidad de longitud")
    region: Union[str, List[int]] = Field("full", description="'full', region con nombre o lista de segmentos")
    name: Optional[str] = None
    expected_count: Optional[float] = Field(None, ge=0, description="E[n] reportado en la tabla")

class NetworkSource(BaseModel):
    """Origen de la red para un diseno: generador sintetico o archivo"""
    generator: Optional[str] = None
    params: Dict[str, Any] = Field(default_factory=dict)
    path: Optional[str] = None
    format: Optional[str] = None
    regions: Dict[str, Union[str, List[int]]] = Field(default_factory=dict)

    @model_validator(mode='after')
    def validate_source(self):
        if (self.generator is None) == (self.path is None):
            raise ValueError("Indique exactamente uno de generator o path")
        return self

class DesignEntry(BaseModel):
    """Un diseno tal como se declara en un archivo TOML/JSON"""
    name: str
    network: NetworkSource
    layers: List[LayerSpec]
    reps: int = Field(100, ge=1)
    k_policies: List[Union[str, int]] = Field(default_factory=lambda: ["5", "10", "auto:35"])
    seed: int = 2024

    @model_validator(mode='after')
    def validate_layers(self):
        roles = {layer.role for layer in self.layers}
        if roles != {FEATURE, CLUTTER}:
            raise ValueError("Un diseno necesita al menos una capa de clutter y una de feature")
        return self

class DesignSpec(BaseModel):
    """Diseno resuelto: red construida y regiones materializadas"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    network: Any
    layers: List[Tuple[Any, float, Label]]
    reps: int = Field(..., ge=1)
    k_policies: List[KPolicy]
    seed: int
    expected_counts: List[Optional[float]] = Field(default_factory=list)

    @model_validator(mode='after')
    def validate_design(self):
        roles = {role for _, _, role in self.layers}
        if roles != {FEATURE, CLUTTER}:
            raise ValueError("Un diseno necesita al menos una capa de clutter y una de feature")
        for region, rate, _ in self.layers:
            length = self.network.total_length if region is None else region.total_length
            if not math.isfinite(rate * length):
                raise ValueError("lambda * |region| debe ser finito")
        if not self.k_policies:
            raise ValueError("Se requiere al menos una politica de K")
        return self

class PolicyRates(BaseModel):
    policy: str
    tpr: Optional[float] = None
    fpr: Optional[float] = None
    acc: Optional[float] = None
    successes: int = 0
    failures: int = 0
    k_mean: Optional[float] = None
    k_sd: Optional[float] = None

class RepResult(BaseModel):
    rep: int
    n: int
    layer_counts: List[int]
    rates: Dict[str, Optional[ConfusionRates]]
    k_hat: Optional[int] = None

class RatesReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    design: str
    seed: int
    reps: int
    lambdas: List[float]
    roles: List[Label]
    expected_counts: List[Optional[float]]
    mean_counts: List[float]
    policies: List[PolicyRates]
    per_rep: List[RepResult] = []

    def policy(self, label: str) -> PolicyRates:
        for entry in self.policies:
            if entry.policy == label:
                return entry
        raise KeyError(label)

# --- Batch run ---

NETWORK_FORMATS = ("geojson", "csv", "segments")
POINT_FORMATS = ("xy", "netpoint", "geojson", "labelled")

class RunConfig(BaseModel):
    """Configuracion completa de una corrida del procedimiento de clasificacion"""
    network_path: str
    network_format: Optional[str] = None
    points_path: str
    points_format: Optional[str] = None
    k: Optional[int] = Field(None, ge=1, description="K fijo; None selecciona K automaticamente")
    k_max: int = Field(35, ge=2)
    snap_tol: float = Field(10.0, ge=0)
    merge_tol: Optional[float] = Field(None, ge=0)
    em_tol: float = Field(1e-8, gt=0)
    em_max_iter: int = Field(1000, ge=1)
    output_dir: str = "./data/output"
    partition_path: Optional[str] = None
    seed: int = 2024
    threads: int = Field(1, ge=1)
    allow_degenerate: bool = False
    allow_partial: bool = False
    time_budget_s: Optional[float] = Field(None, gt=0)
    hist_ks: List[int] = Field(default_factory=list)
    output_format: Literal["csv", "json"] = "csv"
    plots: bool = True

    @field_validator('network_path', 'points_path')
    @classmethod
    def validate_path_exists(cls, v: str) -> str:
        if not os.path.exists(v):
            raise ValueError(f"Archivo no encontrado: {v}")
        return v

    @field_validator('partition_path')
    @classmethod
    def validate_partition_exists(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and not os.path.exists(v):
            raise ValueError(f"Archivo de particion no encontrado: {v}")
        return v

    @field_validator('network_format')
    @classmethod
    def validate_network_format(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and v not in NETWORK_FORMATS:
            raise ValueError(f"Formato de red no soportado: {v}")
        return v

    @field_validator('points_format')
    @classmethod
    def validate_points_format(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and v not in POINT_FORMATS:
            raise ValueError(f"Formato de puntos no soportado: {v}")
        return v

    @field_validator('hist_ks')
    @classmethod
    def validate_hist_ks(cls, v: List[int]) -> List[int]:
        if any(k < 1 for k in v):
            raise ValueError("Los K de histogramas deben ser >= 1")
        return sorted(set(v))

    @property
    def policy(self) -> KPolicy:
        if self.k is not None:
            return KPolicy(mode="fixed", k=self.k)
        return KPolicy(mode="auto", k_max=self.k_max)

    @property
    def needed_k(self) -> int:
        return max([self.policy.needed_k] + self.hist_ks)

# --- API payloads ---

RawSegment = Tuple[Tuple[float, float], Tuple[float, float]]

class NetworkPayload(BaseModel):
    segments: List[RawSegment] = Field(..., min_length=1)
    merge_tol: Optional[float] = Field(None, ge=0)

class PatternRequest(BaseModel):
    network: NetworkPayload
    points: List[NetPoint] = Field(default_factory=list)
    xy: List[Tuple[float, float]] = Field(default_factory=list)
    snap_tol: float = Field(10.0, ge=0)

    @model_validator(mode='after')
    def validate_points(self):
        if bool(self.points) == bool(self.xy):
            raise ValueError("Indique exactamente uno de points o xy")
        return self

class VolumesRequest(PatternRequest):
    k: int = Field(..., ge=1)

class SelectKRequest(PatternRequest):
    k_max: int = Field(35, ge=2)

class ClassifyRequest(PatternRequest):
    k: Optional[int] = Field(None, ge=1)
    k_max: int = Field(35, ge=2)

class VolumesResponse(BaseModel):
    K: int
    samples: List[VolumeSample]

class SelectKResponse(BaseModel):
    curve: EntropyCurve
    fit: SegmentedFit

class ClassifyResponse(BaseModel):
    K: int
    labels: List[Label]
    fit: Dict[str, Any]
    threshold: Optional[float] = None
    n_features: int

class SimulateRequest(BaseModel):
    network: NetworkPayload
    rate: float = Field(..., gt=0)
    seed: int = 2024

class SimulateResponse(BaseModel):
    total_length: float
    expected_count: float
    points: List[NetPoint]
