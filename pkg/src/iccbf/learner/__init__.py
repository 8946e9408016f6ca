"""Controllers that tune barrier gains online, and the episode simulator they act in."""
