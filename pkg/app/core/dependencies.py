from typing import Annotated

from fastapi import Depends, HTTPException, status
from pydantic import ValidationError

from app.core.config import Settings, get_settings
from app.core.errors import GevbevError

SettingsDep = Annotated[Settings, Depends(get_settings)]


def http_error(exc: Exception) -> HTTPException:
    """Domain and validation errors are the caller's fault (400); anything else is ours (500)."""
    code = (
        status.HTTP_400_BAD_REQUEST
        if isinstance(exc, (GevbevError, ValidationError))
        else status.HTTP_500_INTERNAL_SERVER_ERROR
    )
    return HTTPException(status_code=code, detail=f"{type(exc).__name__}: {exc}")
