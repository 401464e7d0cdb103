"""Router evolution harness: strategy-driven global routing, evaluation and evolution."""
