from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class LedgerSchema(BaseModel):
    name: str
    version: str
    description: str
    dialect: str
    schema_data: str = Field(alias="schema")

    class Config:
        allow_population_by_field_name = True


class Manifest(BaseModel):
    """Everything needed to reproduce a run: configuration hash, seed and versions."""
    experiment: str
    kind: str
    config_hash: str
    seed: int
    version: str
    schema_version: str
    verdict: Optional[bool] = None
    files: List[str] = Field(default_factory=list)
    constants: Dict[str, float] = Field(default_factory=dict)
    ledger_schema: Optional[LedgerSchema] = Field(default=None, alias="schema")

    class Config:
        allow_population_by_field_name = True
