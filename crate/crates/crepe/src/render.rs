//! SVG overlay rendering.
