//! Time-binned spatial probability fields estimated with Gaussian multi-kernels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::network::{point_in_polygon, Point};
use crate::scalar::Scalar;

/// Regular lattice over the bounding box of the district; cells whose centre falls outside the
/// district polygon are masked out and never receive mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub origin: Point,
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    pub mask: Vec<bool>,
}

impl Grid {
    pub fn covering(polygon: &[Point], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        let (mut min, mut max) = (polygon[0], polygon[0]);
        for p in polygon {
            min = Point::new(min.x.min(p.x), min.y.min(p.y));
            max = Point::new(max.x.max(p.x), max.y.max(p.y));
        }
        let nx = (((max.x - min.x) / cell).ceil() as usize).max(1);
        let ny = (((max.y - min.y) / cell).ceil() as usize).max(1);
        let mut grid = Self {
            origin: min,
            cell,
            nx,
            ny,
            mask: Vec::new(),
        };
        grid.mask = (0..nx * ny)
            .map(|c| point_in_polygon(polygon, grid.center(c)))
            .collect();
        grid
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Row-major: `cell = iy * nx + ix`.
    pub fn center(&self, cell: usize) -> Point {
        let (ix, iy) = (cell % self.nx, cell / self.nx);
        Point::new(
            self.origin.x + (ix as f64 + 0.5) * self.cell,
            self.origin.y + (iy as f64 + 0.5) * self.cell,
        )
    }

    pub fn cell_of(&self, p: Point) -> Option<usize> {
        let fx = (p.x - self.origin.x) / self.cell;
        let fy = (p.y - self.origin.y) / self.cell;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        (ix < self.nx && iy < self.ny).then_some(iy * self.nx + ix)
    }

    /// Number of cells inside the polygon.
    pub fn active(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// A weighted point event in one time bin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedEvent {
    pub position: Point,
    pub bin: usize,
    pub weight: f64,
}

/// Per-bin probability mass over grid cells, `values[bin * cells + cell]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatioTemporalField<S> {
    pub grid: Grid,
    pub bins: usize,
    pub values: Vec<S>,
}

impl<S: Scalar> SpatioTemporalField<S> {
    pub fn bin(&self, bin: usize) -> &[S] {
        let n = self.grid.cells();
        &self.values[bin * n..(bin + 1) * n]
    }

    pub fn mass(&self, bin: usize) -> S {
        self.bin(bin).iter().copied().sum()
    }

    /// Shannon entropy (nats) of one bin.
    pub fn entropy(&self, bin: usize) -> S {
        -self
            .bin(bin)
            .iter()
            .filter(|&&p| p > S::zero())
            .map(|&p| p * p.ln())
            .sum::<S>()
    }
}

/// Gaussian multi-kernel estimate: per bin, the mass of a cell is proportional to
/// `sum_e w_e * exp(-|c - x_e|^2 / (2 h^2))`, normalised to one over the active cells.
/// Bins without events get the uniform distribution.
///
/// Weights are combined in log space, so a vanishing bandwidth still puts all mass in the
/// cells nearest to the events instead of underflowing to an empty bin.
pub fn estimate_field<S: Scalar>(
    events: &[WeightedEvent],
    bins: usize,
    grid: &Grid,
    bandwidth: S,
) -> SpatioTemporalField<S> {
    let n = grid.cells();
    let active = grid.active().max(1);
    let uniform = S::one() / S::of_usize(active);
    let mut values = vec![S::zero(); bins * n];
    let mut by_bin: Vec<Vec<&WeightedEvent>> = vec![Vec::new(); bins];
    for e in events.iter().filter(|e| e.weight > 0.0 && e.bin < bins) {
        by_bin[e.bin].push(e);
    }
    let two_h2 = S::of(2.0) * bandwidth * bandwidth;
    let centers: Vec<(S, S)> = (0..n)
        .map(|c| {
            let p = grid.center(c);
            (S::of(p.x), S::of(p.y))
        })
        .collect();
    let mut logw = vec![S::neg_infinity(); n];
    for (bin, evs) in by_bin.iter().enumerate() {
        let out = &mut values[bin * n..(bin + 1) * n];
        if evs.is_empty() {
            for (v, &m) in out.iter_mut().zip(&grid.mask) {
                *v = if m { uniform } else { S::zero() };
            }
            continue;
        }
        let prepared: Vec<(S, S, S)> = evs
            .iter()
            .map(|e| {
                (
                    S::of(e.position.x),
                    S::of(e.position.y),
                    S::of(e.weight).ln(),
                )
            })
            .collect();
        let mut terms = vec![S::zero(); prepared.len()];
        for c in 0..n {
            if !grid.mask[c] {
                logw[c] = S::neg_infinity();
                continue;
            }
            let (cx, cy) = centers[c];
            let mut peak = S::neg_infinity();
            for (t, &(ex, ey, lw)) in terms.iter_mut().zip(&prepared) {
                let d2 = (cx - ex) * (cx - ex) + (cy - ey) * (cy - ey);
                *t = lw - d2 / two_h2;
                peak = peak.max(*t);
            }
            logw[c] = peak + terms.iter().map(|&t| (t - peak).exp()).sum::<S>().ln();
        }
        let peak = logw.iter().copied().fold(S::neg_infinity(), S::max);
        let mut total = S::zero();
        for (v, &l) in out.iter_mut().zip(&logw) {
            *v = if l.is_finite() {
                (l - peak).exp()
            } else {
                S::zero()
            };
            total += *v;
        }
        for v in out.iter_mut() {
            *v /= total;
        }
    }
    SpatioTemporalField {
        grid: grid.clone(),
        bins,
        values,
    }
}

/// Inverse-CDF sampler over a field's cells, jittered uniformly inside the drawn cell.
#[derive(Clone, Debug)]
pub struct FieldSampler {
    grid: Grid,
    cdf: Vec<Vec<f64>>,
}

impl FieldSampler {
    pub fn new<S: Scalar>(field: &SpatioTemporalField<S>) -> Self {
        let cdf = (0..field.bins)
            .map(|b| {
                let mut acc = 0.0;
                field
                    .bin(b)
                    .iter()
                    .map(|v| {
                        acc += v.as_f64();
                        acc
                    })
                    .collect()
            })
            .collect();
        Self {
            grid: field.grid.clone(),
            cdf,
        }
    }

    pub fn sample_cell<R: Rng + ?Sized>(&self, bin: usize, rng: &mut R) -> usize {
        let cdf = &self.cdf[bin];
        let total = *cdf.last().expect("non-empty grid");
        let u = rng.random::<f64>() * total;
        let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        // never land on a zero-mass cell because of rounding at the top end
        if idx > 0 && cdf[idx] == cdf[idx - 1] {
            cdf[..idx]
                .iter()
                .rposition(|&c| c < cdf[idx])
                .map_or(idx, |p| p + 1)
        } else {
            idx
        }
    }

    pub fn sample_point<R: Rng + ?Sized>(&self, bin: usize, rng: &mut R) -> Point {
        let cell = self.sample_cell(bin, rng);
        let c = self.grid.center(cell);
        let h = self.grid.cell;
        Point::new(
            c.x + (rng.random::<f64>() - 0.5) * h,
            c.y + (rng.random::<f64>() - 0.5) * h,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn square(side: f64) -> Vec<Point> {
        vec![
            Point::new(0.0, 0.0),
            Point::new(side, 0.0),
            Point::new(side, side),
            Point::new(0.0, side),
        ]
    }

    fn ev(x: f64, y: f64, bin: usize) -> WeightedEvent {
        WeightedEvent {
            position: Point::new(x, y),
            bin,
            weight: 1.0,
        }
    }

    #[test]
    fn grid_geometry() {
        let g = Grid::covering(&square(1000.0), 50.0);
        assert_eq!((g.nx, g.ny), (20, 20));
        assert!(g.mask.iter().all(|&m| m));
        assert_eq!(g.cell_of(Point::new(75.0, 10.0)), Some(1));
        assert_eq!(g.center(21), Point::new(75.0, 75.0));
        assert_eq!(g.cell_of(Point::new(-1.0, 10.0)), None);
    }

    #[test]
    fn triangle_masks_cells() {
        let tri = vec![
            Point::new(0.0, 0.0),
            Point::new(100.0, 0.0),
            Point::new(0.0, 100.0),
        ];
        let g = Grid::covering(&tri, 10.0);
        let active = g.mask.iter().filter(|&&m| m).count();
        assert!(active > 40 && active < 60, "{active}");
        let f = estimate_field::<f64>(&[], 1, &g, 10.0);
        for c in 0..g.cells() {
            if !g.mask[c] {
                assert_eq!(f.bin(0)[c], 0.0);
            }
        }
    }

    #[test]
    fn empty_bins_are_uniform_and_every_bin_normalised() {
        let g = Grid::covering(&square(500.0), 50.0);
        let f = estimate_field::<f64>(&[ev(120.0, 300.0, 1), ev(400.0, 80.0, 1)], 3, &g, 80.0);
        for b in 0..3 {
            assert!((f.mass(b) - 1.0).abs() < 1e-9);
        }
        assert!(f.bin(0).iter().all(|&v| (v - 0.01).abs() < 1e-15));
    }

    #[test]
    fn vanishing_bandwidth_concentrates_in_one_cell() {
        let g = Grid::covering(&square(550.0), 50.0);
        // centre of the 11 x 11 grid, and an off-centre point
        for (x, y) in [(275.0, 275.0), (263.0, 281.0)] {
            let f = estimate_field::<f64>(&[ev(x, y, 0)], 1, &g, 1e-6);
            let cell = g.cell_of(Point::new(x, y)).unwrap();
            assert!((f.bin(0)[cell] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_bandwidth_is_flat() {
        let g = Grid::covering(&square(2000.0), 50.0);
        let diameter = 2000.0 * 2f64.sqrt();
        let f = estimate_field::<f64>(
            &[ev(100.0, 100.0, 0), ev(1900.0, 300.0, 0)],
            1,
            &g,
            100.0 * diameter,
        );
        let u = 1.0 / g.cells() as f64;
        assert!(f.bin(0).iter().all(|&v| (v - u).abs() / u < 0.01));
    }

    #[test]
    fn symmetric_events_give_symmetric_field() {
        let g = Grid::covering(&square(1000.0), 50.0);
        let f = estimate_field::<f64>(&[ev(300.0, 420.0, 0), ev(700.0, 420.0, 0)], 1, &g, 120.0);
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let a = f.bin(0)[iy * g.nx + ix];
                let b = f.bin(0)[iy * g.nx + (g.nx - 1 - ix)];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tighter_kernels_never_raise_entropy() {
        let g = Grid::covering(&square(2000.0), 50.0);
        let events = [
            ev(300.0, 400.0, 0),
            ev(1500.0, 1700.0, 0),
            ev(900.0, 200.0, 0),
        ];
        let diameter = 2000.0 * 2f64.sqrt();
        let mut last = f64::INFINITY;
        for sigma in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0] {
            let f = estimate_field::<f64>(&events, 1, &g, diameter / (2.0 * sigma));
            let h = f.entropy(0);
            assert!(h <= last + 1e-12, "sigma {sigma}: {h} > {last}");
            last = h;
        }
    }

    #[test]
    fn single_precision_field() {
        let g = Grid::covering(&square(500.0), 50.0);
        let f = estimate_field::<f32>(&[ev(120.0, 300.0, 0)], 1, &g, 60.0);
        assert!((f.mass(0) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn sampler_respects_zero_mass() {
        let g = Grid::covering(&square(550.0), 50.0);
        let f = estimate_field::<f64>(&[ev(275.0, 275.0, 0)], 1, &g, 1e-6);
        let s = FieldSampler::new(&f);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cell = g.cell_of(Point::new(275.0, 275.0)).unwrap();
        for _ in 0..1000 {
            let p = s.sample_point(0, &mut rng);
            assert_eq!(g.cell_of(p), Some(cell));
        }
    }
}
