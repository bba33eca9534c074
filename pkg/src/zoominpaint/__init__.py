"""Inpainting with super-resolved refinement: zoom in, refine, zoom out.

The package is organized as:

- ``tensor``    minimal autodiff tensor core (numpy-backed)
- ``layers``    gated convolution, residual blocks, contextual attention,
                spectral normalization
- ``networks``  coarse / super-resolution / refinement / discriminator nets
- ``masks``     procedural brush-stroke mask sampling and statistics
- ``losses``    L1, feature, hinge GAN, gradient and composite stage losses
- ``pipeline``  masking/blending algebra, three-stage forward, training loop
- ``metrics``   PSNR / SSIM / MS-SSIM / L1 and Laplacian-pyramid band analysis
- ``imgio``     PNG <-> tensor conversion
- ``config``    flat key=value run configuration
- ``cli``       command-line entry points
"""

__version__ = "0.1.0"
