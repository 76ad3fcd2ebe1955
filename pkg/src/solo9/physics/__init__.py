from .dynamics import (ArticulatedModel, ContactParams, IntegrationError, SimState,
                       apply_push)
from .terrain import Terrain, TerrainError, flat_terrain, generate_terrain

__all__ = ["ArticulatedModel", "ContactParams", "IntegrationError", "SimState", "apply_push",
           "Terrain", "TerrainError", "flat_terrain", "generate_terrain"]
