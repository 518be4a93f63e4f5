"""Few-shot image classification with an embedding space you can see.

A prototypical-network classifier whose encoder is trained jointly with a
decoder, so class prototypes decode back to images. That makes the model's
notion of each class inspectable, and lets a human steer a prototype by
blending it with the embedding of a guide image — no weight updates, just
moving a point in embedding space.

Subpackages: ``data`` (datasets and episodes), ``network`` (architecture
and checkpoints), ``protonet`` (prototype math), ``training`` (recipes),
``evaluation`` (episodic and fixed-set scoring), ``refinement`` (guided
prototype sessions), ``service`` (HTTP API), ``cli`` (command line).
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
