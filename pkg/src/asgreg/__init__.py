"""Co-registration of a photograph with an untextured mesh via Average Shading Gradients."""
