"""Exception types shared across the package."""


class ModelError(ValueError):
    """Invalid model data or configuration."""


class CaseFormatError(ModelError):
    """A case file could not be parsed into a usable network."""


class RadialityError(ModelError):
    """A feeder graph is not a tree rooted at the interface bus."""


class SolverError(RuntimeError):
    """A solve ended in a state that cannot be interpreted as a market outcome."""


class InfeasibleScenarioError(SolverError):
    """The feeder base case admits no feasible operating point."""


class ScenarioError(RuntimeError):
    """Scenario sampling failed (e.g. no safe base case found)."""
