"""Maximum ideal likelihood estimation for latent-variable models.

The estimator maximizes the complete-data ("ideal") likelihood jointly
over the parameters and the latent variables.
"""

__version__ = "0.1.0"
