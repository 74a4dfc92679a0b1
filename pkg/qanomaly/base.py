from sqlalchemy.orm import declarative_base

# Base class for the run-registry tables
Base = declarative_base()
