use nalgebra::Vector2;

use super::CellIndex;
use crate::error::{invalid, Result};

/// Maps at or below this many cells per side answer clearance queries by an
/// exhaustive scan; larger maps use an expanding ring search. Both are exact.
const BRUTE_FORCE_MAX_SIDE: usize = 200;

/// Per-cell traversability snapshot with clearance queries.
#[derive(Clone, Debug)]
pub struct TraversabilityMask {
    origin: Vector2<f64>,
    resolution: f64,
    width: usize,
    height: usize,
    traversable: Vec<bool>,
    blocked: Vec<CellIndex>,
}

impl TraversabilityMask {
    pub fn new(
        origin: Vector2<f64>,
        resolution: f64,
        width: usize,
        height: usize,
        traversable: Vec<bool>,
    ) -> Self {
        assert_eq!(traversable.len(), width * height);
        let blocked = (0..height)
            .flat_map(|row| (0..width).map(move |col| CellIndex { col, row }))
            .filter(|c| !traversable[c.row * width + c.col])
            .collect();
        TraversabilityMask {
            origin,
            resolution,
            width,
            height,
            traversable,
            blocked,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_traversable(&self, c: CellIndex) -> bool {
        c.col < self.width && c.row < self.height && self.traversable[c.row * self.width + c.col]
    }

    pub fn blocked_cells(&self) -> &[CellIndex] {
        &self.blocked
    }

    fn center(&self, c: CellIndex) -> Vector2<f64> {
        self.origin
            + Vector2::new(
                (c.col as f64 + 0.5) * self.resolution,
                (c.row as f64 + 0.5) * self.resolution,
            )
    }

    fn check_bounds(&self, xy: &Vector2<f64>) -> Result<CellIndex> {
        let local = (xy - self.origin) / self.resolution;
        if local.x >= 0.0
            && local.y >= 0.0
            && (local.x.floor() as usize) < self.width
            && (local.y.floor() as usize) < self.height
        {
            Ok(CellIndex::new(
                local.x.floor() as usize,
                local.y.floor() as usize,
            ))
        } else {
            invalid(format!("clearance query {xy:?} outside map"))
        }
    }

    /// Distance from `xy` to the nearest non-traversable cell center;
    /// `f64::INFINITY` when every cell is traversable.
    pub fn clearance(&self, xy: &Vector2<f64>) -> Result<f64> {
        self.check_bounds(xy)?;
        if self.width <= BRUTE_FORCE_MAX_SIDE && self.height <= BRUTE_FORCE_MAX_SIDE {
            self.clearance_brute_force(xy)
        } else {
            self.clearance_ring_search(xy)
        }
    }

    pub fn clearance_brute_force(&self, xy: &Vector2<f64>) -> Result<f64> {
        self.check_bounds(xy)?;
        Ok(self
            .blocked
            .iter()
            .map(|c| (self.center(*c) - xy).norm())
            .fold(f64::INFINITY, f64::min))
    }

    /// Exact nearest-blocked search over Chebyshev rings around the query cell.
    pub fn clearance_ring_search(&self, xy: &Vector2<f64>) -> Result<f64> {
        let q = self.check_bounds(xy)?;
        if self.blocked.is_empty() {
            return Ok(f64::INFINITY);
        }
        let max_ring = self.width.max(self.height);
        let mut best = f64::INFINITY;
        for k in 0..=max_ring {
            // Any cell on ring k is at least (k - 0.5) cells away on one axis.
            if best.is_finite() && (k as f64 - 0.5) * self.resolution > best {
                break;
            }
            let k = k as isize;
            let (qc, qr) = (q.col as isize, q.row as isize);
            let mut visit = |col: isize, row: isize| {
                if col < 0 || row < 0 || col >= self.width as isize || row >= self.height as isize {
                    return;
                }
                let c = CellIndex::new(col as usize, row as usize);
                if !self.traversable[c.row * self.width + c.col] {
                    best = best.min((self.center(c) - xy).norm());
                }
            };
            if k == 0 {
                visit(qc, qr);
                continue;
            }
            for d in -k..=k {
                visit(qc + d, qr - k);
                visit(qc + d, qr + k);
            }
            for d in (-k + 1)..k {
                visit(qc - k, qr + d);
                visit(qc + k, qr + d);
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(w: usize, h: usize, blocked: &[(usize, usize)]) -> TraversabilityMask {
        let mut t = vec![true; w * h];
        for &(c, r) in blocked {
            t[r * w + c] = false;
        }
        TraversabilityMask::new(Vector2::zeros(), 0.15, w, h, t)
    }

    #[test]
    fn all_traversable_gives_sentinel() {
        let m = mask_from(10, 10, &[]);
        let q = Vector2::new(0.7, 0.7);
        assert_eq!(m.clearance(&q).unwrap(), f64::INFINITY);
        assert_eq!(m.clearance_ring_search(&q).unwrap(), f64::INFINITY);
    }

    #[test]
    fn adjacent_cell_is_one_resolution_away() {
        let m = mask_from(10, 10, &[(5, 5)]);
        let q = Vector2::new(4.5 * 0.15, 5.5 * 0.15);
        assert!((m.clearance(&q).unwrap() - 0.15).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_query_is_error() {
        let m = mask_from(10, 10, &[(5, 5)]);
        assert!(m.clearance(&Vector2::new(-0.1, 0.2)).is_err());
        assert!(m.clearance(&Vector2::new(0.2, 1.6)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]
            #[test]
            fn ring_search_and_brute_force_match_exhaustive(
                w in 1usize..50, h in 1usize..50, density in 0.0f64..0.3,
                bits in proptest::collection::vec(0.0f64..1.0, 2500),
                fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
                let t: Vec<bool> = bits[..w * h].iter().map(|b| *b >= density).collect();
                let m = TraversabilityMask::new(Vector2::new(-1.0, 2.0), 0.15, w, h, t.clone());
                let q = Vector2::new(-1.0 + fx * w as f64 * 0.15 * 0.999,
                                     2.0 + fy * h as f64 * 0.15 * 0.999);
                // Oracle: scan every cell of the raw mask.
                let mut oracle = f64::INFINITY;
                for r in 0..h {
                    for c in 0..w {
                        if !t[r * w + c] {
                            let center = Vector2::new(-1.0 + (c as f64 + 0.5) * 0.15,
                                                      2.0 + (r as f64 + 0.5) * 0.15);
                            oracle = oracle.min((center - q).norm());
                        }
                    }
                }
                prop_assert_eq!(m.clearance(&q).unwrap(), oracle);
                prop_assert_eq!(m.clearance_ring_search(&q).unwrap(), oracle);
            }
        }
    }
}
