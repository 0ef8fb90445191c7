use rand::Rng;
use thiserror::Error;

/// Axis-aligned box of candidate solutions, one `[lower, upper]` interval per
/// dimension. Every engine in this crate searches inside one of these.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpaceError {
    #[error("search space needs at least one dimension")]
    Empty,
    #[error("bound vectors disagree in length: {lower} lower vs {upper} upper")]
    LengthMismatch { lower: usize, upper: usize },
    #[error("dimension {dim}: bounds [{lower}, {upper}] are not finite ordered values")]
    Invalid { dim: usize, lower: f64, upper: f64 },
    #[error("dimension {dim}: interval [{lower}, {upper}] is too narrow to search")]
    DegenerateWidth { dim: usize, lower: f64, upper: f64 },
}

/// Relative width below which an interval counts as degenerate.
const MIN_RELATIVE_WIDTH: f64 = 1e-9;

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, SpaceError> {
        if lower.len() != upper.len() {
            return Err(SpaceError::LengthMismatch {
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(SpaceError::Empty);
        }
        for (dim, (&lo, &up)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !up.is_finite() || lo > up {
                return Err(SpaceError::Invalid { dim, lower: lo, upper: up });
            }
            if !interval_is_searchable(lo, up) {
                return Err(SpaceError::DegenerateWidth { dim, lower: lo, upper: up });
            }
        }
        Ok(SearchSpace { lower, upper })
    }

    /// Same interval in every dimension.
    pub fn uniform(dimension: usize, lower: f64, upper: f64) -> Result<Self, SpaceError> {
        Self::new(vec![lower; dimension], vec![upper; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, dim: usize) -> f64 {
        self.upper[dim] - self.lower[dim]
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dimension()
            && point
                .iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((&x, &lo), &up)| x >= lo && x <= up)
    }

    /// Uniform sample, one draw per dimension in index order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &up)| rng.random_range(lo..=up))
            .collect()
    }

    /// Clamp `point` into the box, in place.
    pub fn clamp(&self, point: &mut [f64]) {
        for (x, (&lo, &up)) in point.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(lo, up);
        }
    }
}

/// True when the interval is wide enough relative to its endpoints that
/// uniform sampling and velocity updates stay numerically meaningful.
pub fn interval_is_searchable(lower: f64, upper: f64) -> bool {
    let scale = 1.0_f64.max(lower.abs()).max(upper.abs());
    upper - lower > MIN_RELATIVE_WIDTH * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_empty_and_mismatched_bounds() {
        assert_eq!(SearchSpace::new(vec![], vec![]), Err(SpaceError::Empty));
        assert!(matches!(
            SearchSpace::new(vec![0.0], vec![1.0, 2.0]),
            Err(SpaceError::LengthMismatch { lower: 1, upper: 2 })
        ));
    }

    #[test]
    fn rejects_inverted_and_non_finite_bounds() {
        assert!(matches!(
            SearchSpace::new(vec![1.0], vec![0.0]),
            Err(SpaceError::Invalid { dim: 0, .. })
        ));
        assert!(matches!(
            SearchSpace::new(vec![f64::NAN], vec![1.0]),
            Err(SpaceError::Invalid { dim: 0, .. })
        ));
        assert!(matches!(
            SearchSpace::new(vec![0.0], vec![f64::INFINITY]),
            Err(SpaceError::Invalid { dim: 0, .. })
        ));
    }

    #[test]
    fn rejects_degenerate_width() {
        assert!(matches!(
            SearchSpace::new(vec![0.0], vec![1e-12]),
            Err(SpaceError::DegenerateWidth { dim: 0, .. })
        ));
        assert!(matches!(
            SearchSpace::new(vec![5.0, 1e6], vec![6.0, 1e6 + 1e-5]),
            Err(SpaceError::DegenerateWidth { dim: 1, .. })
        ));
    }

    #[test]
    fn samples_stay_inside() {
        let space = SearchSpace::new(vec![-5.0, 10.0], vec![5.0, 20.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x = space.sample(&mut rng);
            assert!(space.contains(&x), "sample {x:?} escaped the box");
        }
    }

    #[test]
    fn clamp_pulls_points_back() {
        let space = SearchSpace::new(vec![0.0], vec![1.0]).unwrap();
        let mut x = vec![3.5];
        space.clamp(&mut x);
        assert_eq!(x, vec![1.0]);
        let mut y = vec![-0.25];
        space.clamp(&mut y);
        assert_eq!(y, vec![0.0]);
    }
}
