"""Incompressible finite-strain viscoelasticity with neural-network potentials.

The package is organized around small, composable modules:

``tensor3``
    Fixed-size 3x3 tensor algebra (matrix functions, Kelvin-Mandel packing).
``kinematics``
    Deformation measures, invariant sets, and their analytic gradients.
``groundtruth``
    Classical neo-Hookean / Maxwell reference model used to synthesize data.
``ficnn``
    Monotonic fully input-convex networks, gate layers, and the trainable
    potential model built from them.
``material``
    Generic constitutive mechanics (stress, forces, evolution rates) over a
    model's potential hooks, plus linear-parameter extraction.
``integrator``
    Explicit and implicit exponential-map time stepping with a Newton
    corrector, and the plane-stress path driver.
``datagen``
    Seeded smooth random walks, relaxation and ramp load paths, CSV datasets.
``calibrate``
    Sobolev stress loss, gate regularization, adjoint gradients through the
    time stepper, and the two-stage training loop.
``cli``
    ``gsmvisco`` command line entry point (gen / train / predict / lincheck /
    verify).

All quantities use MPa and seconds unless stated otherwise.
"""

__version__ = "0.1.0"
