"""Microscopic particle simulators."""
from .state import CollisionEvent, Particle, SimState, Snapshot
from .stepper import StepPolicy, step
from .run import RunRecord, run, tracer_observer
