from datetime import datetime
from sqlalchemy import (
    Boolean, Column, DateTime, Float, ForeignKey, Integer, JSON, String, Text
)
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()

# ---------- 1. Runs ----------
class Run(Base):
    __tablename__ = "runs"

    run_id       = Column(Integer, primary_key=True, autoincrement=True)
    experiment   = Column(String, nullable=False)
    kind         = Column(String, nullable=False)
    config_hash  = Column(String(64), nullable=False, index=True)
    seed         = Column(Integer, nullable=False)
    verdict      = Column(Boolean, nullable=True)
    created_at   = Column(DateTime, default=datetime.utcnow, nullable=False)

    convergence = relationship("ConvergenceRecord", back_populates="run", cascade="all, delete-orphan")
    bounds      = relationship("BoundRecord", back_populates="run", cascade="all, delete-orphan")
    audits      = relationship("AuditRecord", back_populates="run", cascade="all, delete-orphan")

# ---------- 2. Convergence table rows ----------
class ConvergenceRecord(Base):
    __tablename__ = "convergence_rows"

    id         = Column(Integer, primary_key=True, autoincrement=True)
    run_id     = Column(Integer, ForeignKey("runs.run_id"), nullable=False)
    epsilon    = Column(Float, nullable=False)
    t          = Column(Float, nullable=False)
    d_p        = Column(Float, nullable=True)   # null for aborted cells
    flags      = Column(Text, nullable=True)    # ';'-joined

    run = relationship("Run", back_populates="convergence")

# ---------- 3. Bound ledger ----------
class BoundRecord(Base):
    __tablename__ = "bound_entries"

    id         = Column(Integer, primary_key=True, autoincrement=True)
    run_id     = Column(Integer, ForeignKey("runs.run_id"), nullable=False)
    name       = Column(String, nullable=False)
    lhs        = Column(Float, nullable=False)
    rhs        = Column(Float, nullable=False)
    passed     = Column(Boolean, nullable=False)
    terms_json = Column(JSON, nullable=True)

    run = relationship("Run", back_populates="bounds")

# ---------- 4. Audited checks ----------
class AuditRecord(Base):
    __tablename__ = "audit_checks"

    id         = Column(Integer, primary_key=True, autoincrement=True)
    run_id     = Column(Integer, ForeignKey("runs.run_id"), nullable=False)
    report     = Column(String, nullable=False)
    name       = Column(String, nullable=False)
    value      = Column(Float, nullable=True)
    bound      = Column(Float, nullable=True)
    passed     = Column(Boolean, nullable=False)
    note       = Column(Text, nullable=True)

    run = relationship("Run", back_populates="audits")
