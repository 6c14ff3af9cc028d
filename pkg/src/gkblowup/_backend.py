"""jax import with double precision switched on; every jax-using module imports this first."""

import jax

jax.config.update("jax_enable_x64", True)
