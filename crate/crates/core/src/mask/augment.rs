use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::morphology::dilate;
use super::{Mask, MaskError, MaskKind, StructuringElement};

/// Parameters of one random dilation draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilationSpec {
    #[serde(skip, default)]
    pub element: StructuringElement,
    pub n_max: usize,
    pub rng_seed: u64,
}

/// `ceil(max(H, W) / 16)`.
pub fn default_n_max(height: usize, width: usize) -> usize {
    height.max(width).div_ceil(16)
}

/// Iteration count drawn uniformly from `0..=n_max`.
pub fn draw_iterations(spec: &DilationSpec) -> usize {
    ChaCha8Rng::seed_from_u64(spec.rng_seed).random_range(0..=spec.n_max)
}

/// `(fine ⊕ⁿ b) ∩ coarse` with `n` drawn from `spec`.
///
/// The fine mask must already lie inside the coarse mask; violations are
/// reported rather than clipped.
pub fn random_dilation_augment(fine: &Mask, coarse: &Mask, spec: &DilationSpec) -> Result<Mask, MaskError> {
    if fine.height != coarse.height || fine.width != coarse.width {
        return Err(MaskError::ShapeMismatch(fine.height, fine.width, coarse.height, coarse.width));
    }
    let excess = fine.excess_over(coarse)?;
    if excess > 0 {
        return Err(MaskError::FineNotInCoarse(excess));
    }
    let n = draw_iterations(spec);
    let grown = dilate(fine, &spec.element, n);
    Ok(grown
        .intersect(coarse)?
        .with_kind(MaskKind::Dilated)
        .with_source(format!("dilate n={n} seed={}", spec.rng_seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> (Mask, Mask) {
        let coarse = Mask::from_fn(16, 12, MaskKind::Coarse, |y, x| (3..14).contains(&y) && (2..10).contains(&x));
        let fine = Mask::from_fn(16, 12, MaskKind::Fine, |y, x| (6..9).contains(&y) && (5..7).contains(&x));
        (fine, coarse)
    }

    fn seed_drawing(n_max: usize, want: usize) -> u64 {
        (0..10_000u64)
            .find(|&s| {
                draw_iterations(&DilationSpec {
                    element: StructuringElement::default(),
                    n_max,
                    rng_seed: s,
                }) == want
            })
            .unwrap()
    }

    #[test]
    fn zero_draw_returns_fine_mask() {
        let (fine, coarse) = pair();
        let spec = DilationSpec {
            element: StructuringElement::default(),
            n_max: 5,
            rng_seed: seed_drawing(5, 0),
        };
        assert_eq!(random_dilation_augment(&fine, &coarse, &spec).unwrap().bits, fine.bits);
    }

    #[test]
    fn saturated_draw_returns_coarse_mask() {
        let (fine, coarse) = pair();
        let n_max = 16 + 12;
        let spec = DilationSpec {
            element: StructuringElement::default(),
            n_max,
            rng_seed: seed_drawing(n_max, n_max),
        };
        assert_eq!(random_dilation_augment(&fine, &coarse, &spec).unwrap().bits, coarse.bits);
    }

    #[test]
    fn violations_are_errors() {
        let (fine, coarse) = pair();
        let spec = DilationSpec {
            element: StructuringElement::default(),
            n_max: 3,
            rng_seed: 0,
        };
        assert_eq!(
            random_dilation_augment(&coarse, &fine, &spec),
            Err(MaskError::FineNotInCoarse(coarse.count() - fine.count()))
        );
        let small = Mask::empty(4, 4, MaskKind::Coarse);
        assert!(matches!(
            random_dilation_augment(&fine, &small, &spec),
            Err(MaskError::ShapeMismatch(..))
        ));
    }

    #[test]
    fn same_seed_same_mask() {
        let (fine, coarse) = pair();
        let spec = DilationSpec {
            element: StructuringElement::default(),
            n_max: 6,
            rng_seed: 42,
        };
        assert_eq!(
            random_dilation_augment(&fine, &coarse, &spec).unwrap(),
            random_dilation_augment(&fine, &coarse, &spec).unwrap()
        );
    }

    #[test]
    fn default_n_max_rounds_up() {
        assert_eq!(default_n_max(64, 48), 4);
        assert_eq!(default_n_max(1024, 768), 64);
        assert_eq!(default_n_max(17, 3), 2);
    }
}
