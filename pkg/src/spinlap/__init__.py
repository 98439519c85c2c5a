"""spinlap: a numerical laboratory for spinor Laplacians on translation surfaces.

Builds genus-g translation surfaces with 4pi cone points from period moduli
(glued slit tori), evaluates theta/prime-form/Szego kernels on them,
discretizes the conical spinor Laplacian under the Friedrichs, Szego and
holomorphic self-adjoint extensions, and assembles the determinant
comparison and bosonization-type identities at desk scale.
"""

__version__ = "0.1.0"
