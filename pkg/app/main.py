from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from app.core.config import get_settings
from app.core.errors import NetworkFeatureError
from app.api import routes
from app.utils.logging import setup_logging
import logging

# Initialize logging
settings = get_settings()
setup_logging(settings.log_level)
logger = logging.getLogger(__name__)

app = FastAPI(
    title=settings.app_name,
    version=settings.app_version,
    debug=settings.debug
)

# CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Rutas de la API
app.include_router(routes.router, prefix="/api/v1")

@app.exception_handler(NetworkFeatureError)
async def network_feature_error_handler(request: Request, exc: NetworkFeatureError):
    logger.warning(f"Error del dominio en {request.url.path}: {exc}")
    return JSONResponse(status_code=400, content={"detail": str(exc)})

@app.get("/api/health")
async def health_check():
    return {"status": "healthy"}
