//! Spatial meshes on `[0, x_max]`.
//!
//! A refined grid packs `fine_intervals` intervals of width `refine_ratio * h` against
//! the free boundary and continues with the coarse spacing `h`. The single interval
//! where the two meet is handled by the non-uniform interior rows.

use crate::error::{Error, Result};

/// Coordinates closer than this multiple of `h` are treated as the same node.
const NODE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridMode {
    Uniform,
    Refined,
}

impl GridMode {
    pub fn name(self) -> &'static str {
        match self {
            GridMode::Uniform => "uniform",
            GridMode::Refined => "refined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Coarse spacing.
    pub h: f64,
    pub x_max: f64,
    pub mode: GridMode,
    /// Fine spacing as a fraction of `h`.
    pub refine_ratio: f64,
    /// Number of fine intervals at the left edge.
    pub fine_intervals: usize,
    /// Offsets, in multiples of `h`, of the nodes sampled by the boundary estimator.
    pub gamma: [f64; 4],
}

impl GridSpec {
    pub const DEFAULT_REFINE_RATIO: f64 = 0.25;
    pub const DEFAULT_FINE_INTERVALS: usize = 8;
    pub const MIN_FINE_INTERVALS: usize = 8;

    pub fn uniform(h: f64, x_max: f64) -> Self {
        GridSpec {
            h,
            x_max,
            mode: GridMode::Uniform,
            refine_ratio: 1.0,
            fine_intervals: 0,
            gamma: [1.0, 2.0, 3.0, 4.0],
        }
    }

    pub fn refined(h: f64, x_max: f64) -> Self {
        GridSpec {
            h,
            x_max,
            mode: GridMode::Refined,
            refine_ratio: Self::DEFAULT_REFINE_RATIO,
            fine_intervals: Self::DEFAULT_FINE_INTERVALS,
            gamma: [0.5, 1.0, 1.5, 2.0],
        }
    }

    pub fn with_gamma(mut self, gamma: [f64; 4]) -> Self {
        self.gamma = gamma;
        self
    }

    /// Spacing of the first interval.
    pub fn boundary_spacing(&self) -> f64 {
        match self.mode {
            GridMode::Uniform => self.h,
            GridMode::Refined => self.refine_ratio * self.h,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidGrid(format!("h must be positive, got {}", self.h)));
        }
        if !(self.x_max > 0.0 && self.x_max.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "x_max must be positive, got {}",
                self.x_max
            )));
        }
        if self.mode == GridMode::Refined {
            if !(self.refine_ratio > 0.0 && self.refine_ratio <= 1.0) {
                return Err(Error::InvalidGrid(format!(
                    "refinement ratio must lie in (0, 1], got {}",
                    self.refine_ratio
                )));
            }
            if self.fine_intervals < Self::MIN_FINE_INTERVALS {
                return Err(Error::InvalidGrid(format!(
                    "refined grids need at least {} fine intervals, got {}",
                    Self::MIN_FINE_INTERVALS,
                    self.fine_intervals
                )));
            }
        }
        if self.gamma.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "gamma offsets must be positive, got {:?}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Node coordinates `x_0 = 0 < x_1 < ... < x_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
    spacings: Vec<f64>,
    mode: GridMode,
    uniform_prefix: usize,
}

impl Grid {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `spacings()[i] = x_{i+1} - x_i`.
    pub fn spacings(&self) -> &[f64] {
        &self.spacings
    }

    pub fn mode(&self) -> GridMode {
        self.mode
    }

    /// Number of leading intervals that share the first spacing.
    pub fn uniform_prefix(&self) -> usize {
        self.uniform_prefix
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index `M` of the far-field node.
    pub fn last_index(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn boundary_spacing(&self) -> f64 {
        self.spacings[0]
    }

    /// Index of the node at coordinate `x`, if any.
    pub fn find_node(&self, x: f64, tolerance: f64) -> Option<usize> {
        let i = self.nodes.partition_point(|&v| v < x - tolerance);
        (i < self.nodes.len() && (self.nodes[i] - x).abs() <= tolerance).then_some(i)
    }
}

pub fn build(spec: &GridSpec) -> Result<Grid> {
    spec.validate()?;
    let h = spec.h;
    let nodes = match spec.mode {
        GridMode::Uniform => {
            let n = (spec.x_max / h - NODE_TOLERANCE).ceil() as usize;
            (0..=n).map(|i| i as f64 * h).collect::<Vec<_>>()
        }
        GridMode::Refined => {
            let fine = spec.refine_ratio * h;
            let mut nodes: Vec<f64> = (0..=spec.fine_intervals).map(|i| i as f64 * fine).collect();
            let base = spec.fine_intervals as f64 * fine;
            let mut j = 1usize;
            while *nodes.last().unwrap() < spec.x_max - NODE_TOLERANCE * h {
                nodes.push(base + j as f64 * h);
                j += 1;
            }
            nodes
        }
    };
    if nodes.len() < 6 {
        return Err(Error::InvalidGrid(format!(
            "grid has {} nodes; at least 6 are required",
            nodes.len()
        )));
    }
    let spacings: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
    let uniform_prefix = match spec.mode {
        GridMode::Uniform => spacings.len(),
        GridMode::Refined => spec.fine_intervals.min(spacings.len()),
    };
    let grid = Grid {
        nodes,
        spacings,
        mode: spec.mode,
        uniform_prefix,
    };
    gamma_nodes(&grid, spec).map_err(|e| Error::InvalidGrid(e.to_string()))?;
    Ok(grid)
}

/// Indices of the nodes at `gamma_i * h`.
pub fn gamma_nodes(grid: &Grid, spec: &GridSpec) -> Result<[usize; 4]> {
    let mut out = [0usize; 4];
    for (slot, gamma) in out.iter_mut().zip(spec.gamma) {
        let offset = gamma * spec.h;
        *slot = grid
            .find_node(offset, NODE_TOLERANCE * spec.h)
            .ok_or(Error::Alignment { offset })?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_is_an_arithmetic_progression() {
        let g = build(&GridSpec::uniform(0.1, 3.0)).unwrap();
        assert_eq!(g.len(), 31);
        assert_eq!(g.nodes()[0], 0.0);
        assert!((g.nodes()[30] - 3.0).abs() < 1e-12);
        assert!(g.spacings().iter().all(|h| (h - 0.1).abs() < 1e-12));
        assert_eq!(g.last_index(), 30);
    }

    #[test]
    fn refined_grid_layout() {
        let g = build(&GridSpec::refined(0.1, 3.0)).unwrap();
        let x = g.nodes();
        for i in 0..=8 {
            assert!((x[i] - 0.025 * i as f64).abs() < 1e-14);
        }
        assert!((x[9] - 0.3).abs() < 1e-14);
        assert!(*x.last().unwrap() >= 3.0 - 1e-12);
        assert_eq!(g.uniform_prefix(), 8);
        for (i, h) in g.spacings().iter().enumerate() {
            let expected = if i < 8 { 0.025 } else { 0.1 };
            assert!((h - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_lookup() {
        let spec = GridSpec::uniform(0.1, 3.0);
        let g = build(&spec).unwrap();
        assert_eq!(gamma_nodes(&g, &spec).unwrap(), [1, 2, 3, 4]);

        let spec = GridSpec::refined(0.1, 3.0);
        let g = build(&spec).unwrap();
        assert_eq!(gamma_nodes(&g, &spec).unwrap(), [2, 4, 6, 8]);

        let bad = spec.with_gamma([0.3, 1.0, 1.5, 2.0]);
        assert!(matches!(gamma_nodes(&g, &bad), Err(Error::Alignment { .. })));
        assert!(matches!(build(&bad), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn rejects_short_refined_patch() {
        let mut spec = GridSpec::refined(0.1, 3.0);
        spec.fine_intervals = 4;
        assert!(matches!(build(&spec), Err(Error::InvalidGrid(_))));
        spec.fine_intervals = 8;
        spec.refine_ratio = 0.0;
        assert!(build(&spec).is_err());
    }

    #[test]
    fn spacings_sum_to_last_node() {
        for spec in [
            GridSpec::uniform(0.06, 3.0),
            GridSpec::refined(0.06, 3.0),
            GridSpec::refined(0.0125, 3.0).with_gamma([1.0, 2.0, 3.0, 4.0]),
        ] {
            let g = build(&spec).unwrap();
            let total: f64 = g.spacings().iter().sum();
            assert!((total - g.nodes()[g.last_index()]).abs() < 1e-12);
            assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
            assert_eq!(build(&spec).unwrap(), g);
        }
    }
}
